#include "simcl/learn.hpp"

#include <algorithm>
#include <cstdio>

namespace simcl {
namespace {

// Per-image augmentation stream: depends only on (base seed, epoch, dataset
// index), never on batch composition or iteration order.
Rng image_stream(std::uint64_t base, int epoch, std::int64_t index) {
  return Rng(hash_combine64(hash_combine64(base, static_cast<std::uint64_t>(epoch)), static_cast<std::uint64_t>(index)));
}

void image_to_chw(const Image& img, float* dst) {
  const int h = img.height, w = img.width;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) dst[(static_cast<std::size_t>(c) * h + y) * w + x] = img.at(y, x, c);
}

// [N,3,H,W] batch; when `pipe` is non-null each image goes through its own
// stream; pairs of adjacent rows when `paired` (x1 at 2j, x2 at 2j+1).
Tensor image_batch(const ImageDataset& ds, const std::vector<std::int64_t>& indices, std::size_t begin,
                   std::size_t count, const AugmentPipeline* pipe, std::uint64_t aug_seed, int epoch, bool paired) {
  const int h = ds.height, w = ds.width;
  const std::size_t per = static_cast<std::size_t>(h) * w * 3;
  const std::size_t rows = paired ? count * 2 : count;
  std::vector<float> buf(rows * per);
  for (std::size_t j = 0; j < count; ++j) {
    const std::int64_t idx = indices[begin + j];
    const Image base = to_float_image(ds.image(idx), h, w);
    if (paired) {
      ViewPair pair = make_view_pair(base, *pipe, image_stream(aug_seed, epoch, idx));
      image_to_chw(pair.x1, buf.data() + (2 * j) * per);
      image_to_chw(pair.x2, buf.data() + (2 * j + 1) * per);
    } else if (pipe) {
      Rng stream = image_stream(aug_seed, epoch, idx);
      image_to_chw(apply(*pipe, base, stream), buf.data() + j * per);
    } else {
      image_to_chw(base, buf.data() + j * per);
    }
  }
  return tensor_from({static_cast<std::int64_t>(rows), 3, h, w}, std::move(buf));
}

std::vector<int> labels_of(const ImageDataset& ds, const std::vector<std::int64_t>& indices, std::size_t begin,
                           std::size_t count) {
  std::vector<int> out(count);
  for (std::size_t j = 0; j < count; ++j) out[j] = ds.labels[static_cast<std::size_t>(indices[begin + j])];
  return out;
}

constexpr std::size_t kEvalBatch = 256;

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::int64_t n = logits.shape[0], k = logits.shape[1];
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = logits.ptr() + i * k;
    int best = 0;
    for (std::int64_t j = 1; j < k; ++j)
      if (row[j] > row[best]) best = static_cast<int>(j);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

std::vector<int> predict(ModelAssembly& model, const ImageDataset& ds, const std::vector<std::int64_t>& indices) {
  std::vector<int> preds;
  preds.reserve(indices.size());
  for (std::size_t at = 0; at < indices.size(); at += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, indices.size() - at);
    Tape tape;
    Tensor logits = model.forward(tape, image_batch(ds, indices, at, n, nullptr, 0, 0, false), false);
    for (int p : argmax_rows(logits)) preds.push_back(p);
  }
  return preds;
}

// Eval-mode encoder features for an index list, one batch at a time.
std::vector<float> encode_features(ModelAssembly& model, const ImageDataset& ds,
                                   const std::vector<std::int64_t>& indices) {
  const auto d = static_cast<std::size_t>(model.encoder.arch.feature_dim());
  std::vector<float> out(indices.size() * d);
  for (std::size_t at = 0; at < indices.size(); at += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, indices.size() - at);
    Tape tape;
    Tensor f = model.encoder.forward(tape, image_batch(ds, indices, at, n, nullptr, 0, 0, false), false);
    std::copy(f.vals().begin(), f.vals().end(), out.begin() + at * d);
  }
  return out;
}

double agreement_rate(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.empty() || a.size() != b.size()) throw ContractError("agreement over mismatched prediction lists");
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

struct SubSeeds {
  std::uint64_t init, head, shuffle, aug;
};

SubSeeds sub_seeds(std::uint64_t seed) {
  return {hash_combine64(seed, 1), hash_combine64(seed, 2), hash_combine64(seed, 3), hash_combine64(seed, 4)};
}

}  // namespace

FinetuneMode parse_finetune_mode(const std::string& s) {
  if (s == "linear_probe") return FinetuneMode::kLinearProbe;
  if (s == "full") return FinetuneMode::kFull;
  throw ConfigError("unknown finetune mode '" + s + "'");
}

PretrainResult pretrain(const ImageDataset& ds, const std::vector<std::int64_t>& unlabeled,
                        const AugmentPipeline& pipeline, const EncoderArch& arch, int proj_dim,
                        const ContrastConfig& cfg, std::uint64_t seed) {
  if (!(cfg.temperature > 0)) throw ConfigError("pretrain: temperature must be positive");
  if (cfg.epochs < 1 || cfg.batch_size < 2) throw ConfigError("pretrain: needs epochs >= 1 and batch_size >= 2");
  if (unlabeled.size() < 2) throw ConfigError("pretrain: needs at least 2 images");
  if (pipeline.ops.empty())
    std::fprintf(stderr, "note: pretraining with preset 'none' gives identical views; contrastive signal degenerates\n");

  const SubSeeds ss = sub_seeds(seed);
  ModelAssembly model = assemble(build_encoder(arch, ss.init), {HeadKind::kProjection, proj_dim, 0}, false, ss.head);
  auto params = model.trainable_params();
  auto state = SgdState::zeros_like(params);

  RunMetrics metrics;
  metrics.seed = seed;
  const std::size_t n = std::min(static_cast<std::size_t>(cfg.batch_size), unlabeled.size());
  std::int64_t step_index = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::int64_t> order = unlabeled;
    Rng(hash_combine64(ss.shuffle, static_cast<std::uint64_t>(epoch))).shuffle(order);
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at + n <= order.size(); at += n, ++steps, ++step_index) {
      try {
        Tape tape;
        params = model.trainable_params();
        for (auto* p : params) tape.watch(*p);
        Tensor batch = image_batch(ds, order, at, n, &pipeline, ss.aug, epoch, true);
        Tensor z = model.forward(tape, batch, true);
        Tensor loss = nt_xent_loss(tape, z, cfg.temperature);
        loss_sum += loss.scalar();
        GradMap grads = tape.backward(loss);
        sgd_step<float>(params, grads, state, cfg.optimizer);
      } catch (const std::exception& e) {
        throw StateError("pretrain epoch " + std::to_string(epoch) + " step " + std::to_string(step_index) + ": " +
                         e.what());
      }
    }
    metrics.add(epoch, "train", "loss", loss_sum / static_cast<double>(steps ? steps : 1));
  }
  Checkpoint ckpt = encoder_checkpoint(model.encoder);
  ckpt.step = static_cast<std::uint64_t>(step_index);
  return {std::move(ckpt), std::move(metrics)};
}

FinetuneResult finetune(const Checkpoint* encoder_ckpt, const EncoderArch& arch, const ImageDataset& ds,
                        const DataSplits& splits, const AugmentPipeline& pipeline, FinetuneMode mode,
                        const SgdHyper& hyper, int batch_size, std::uint64_t seed, HeadKind head_kind) {
  hyper.validate();
  if (splits.labeled.empty()) throw ConfigError("finetune: empty labeled set");
  if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");

  const SubSeeds ss = sub_seeds(seed);
  const bool frozen = mode == FinetuneMode::kLinearProbe;
  ModelAssembly model = assemble(build_encoder(arch, ss.init), {head_kind, ds.num_classes, 0}, frozen, ss.head);
  if (encoder_ckpt) load_encoder_into(model, *encoder_ckpt);

  RunMetrics metrics;
  metrics.seed = seed;
  auto params = model.trainable_params();
  auto state = SgdState::zeros_like(params);
  const std::size_t n = std::min(static_cast<std::size_t>(batch_size), splits.labeled.size());

  // Frozen encoder + empty pipeline: inputs never change, so encode once and
  // train the head on cached features.
  const bool cache_features = frozen && pipeline.ops.empty();
  std::vector<float> feats;
  const auto d = static_cast<std::size_t>(arch.feature_dim());
  std::vector<std::size_t> row_of(ds.labels.size());
  if (cache_features) {
    feats = encode_features(model, ds, splits.labeled);
    for (std::size_t r = 0; r < splits.labeled.size(); ++r) row_of[static_cast<std::size_t>(splits.labeled[r])] = r;
  }

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    std::vector<std::int64_t> order = splits.labeled;
    Rng(hash_combine64(ss.shuffle, static_cast<std::uint64_t>(epoch))).shuffle(order);
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at + n <= order.size(); at += n, ++steps) {
      Tape tape;
      params = model.trainable_params();
      for (auto* p : params) tape.watch(*p);
      Tensor logits;
      if (cache_features) {
        std::vector<float> rows(n * d);
        for (std::size_t j = 0; j < n; ++j)
          std::copy_n(feats.begin() + static_cast<std::ptrdiff_t>(row_of[static_cast<std::size_t>(order[at + j])] * d),
                      d, rows.begin() + static_cast<std::ptrdiff_t>(j * d));
        logits = model.head_forward(tape, tensor_from({static_cast<std::int64_t>(n), static_cast<std::int64_t>(d)},
                                                      std::move(rows)));
      } else {
        const AugmentPipeline* pipe = pipeline.ops.empty() ? nullptr : &pipeline;
        logits = model.forward(tape, image_batch(ds, order, at, n, pipe, ss.aug, epoch, false), true);
      }
      Tensor loss = softmax_cross_entropy(tape, logits, labels_of(ds, order, at, n));
      loss_sum += loss.scalar();
      GradMap grads = tape.backward(loss);
      sgd_step<float>(params, grads, state, hyper);
    }
    metrics.add(epoch, "train", "loss", loss_sum / static_cast<double>(steps ? steps : 1));
    if (!splits.val.empty()) metrics.add(epoch, "val", "accuracy", evaluate(model, ds, splits.val).accuracy);
  }
  if (!splits.test.empty()) metrics.add_final("test_accuracy", evaluate(model, ds, splits.test).accuracy);
  return {std::move(model), std::move(metrics)};
}

EvalResult evaluate(ModelAssembly& model, const ImageDataset& ds, const std::vector<std::int64_t>& indices) {
  if (indices.empty()) throw ContractError("evaluate: empty index list");
  EvalResult res;
  res.predictions = predict(model, ds, indices);
  std::vector<std::int64_t> hit(static_cast<std::size_t>(ds.num_classes), 0), total(static_cast<std::size_t>(ds.num_classes), 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const int label = ds.labels[static_cast<std::size_t>(indices[i])];
    ++total[static_cast<std::size_t>(label)];
    if (res.predictions[i] == label) {
      ++hit[static_cast<std::size_t>(label)];
      ++correct;
    }
  }
  res.accuracy = static_cast<double>(correct) / static_cast<double>(indices.size());
  res.per_class.resize(hit.size(), 0.0);
  for (std::size_t c = 0; c < hit.size(); ++c)
    res.per_class[c] = total[c] ? static_cast<double>(hit[c]) / static_cast<double>(total[c]) : 0.0;
  return res;
}

DistillResult distill(ModelAssembly& teacher, ModelAssembly student, const ImageDataset& ds, const DataSplits& splits,
                      const DistillConfig& cfg, std::uint64_t seed) {
  if (teacher.head_spec.out_dim != student.head_spec.out_dim)
    throw ConfigError("distill: teacher has " + std::to_string(teacher.head_spec.out_dim) + " classes, student " +
                      std::to_string(student.head_spec.out_dim));
  if (!(cfg.temperature > 0)) throw ConfigError("distill: temperature must be positive");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("distill: needs epochs >= 1 and batch_size >= 1");
  if (splits.val.empty() || splits.test.empty()) throw ConfigError("distill: needs val and test splits for agreement");

  std::vector<std::int64_t> train = splits.labeled;
  train.insert(train.end(), splits.unlabeled.begin(), splits.unlabeled.end());
  std::sort(train.begin(), train.end());
  if (train.empty()) throw ConfigError("distill: empty training set");

  // The teacher never trains and never augments, so its logits per image are
  // fixed: compute them once.
  const auto k = static_cast<std::size_t>(teacher.head_spec.out_dim);
  std::vector<float> t_logits(train.size() * k);
  for (std::size_t at = 0; at < train.size(); at += kEvalBatch) {
    const std::size_t n = std::min(kEvalBatch, train.size() - at);
    Tape tape;
    Tensor l = teacher.forward(tape, image_batch(ds, train, at, n, nullptr, 0, 0, false), false);
    std::copy(l.vals().begin(), l.vals().end(), t_logits.begin() + static_cast<std::ptrdiff_t>(at * k));
  }
  std::vector<std::size_t> row_of(ds.labels.size());
  for (std::size_t r = 0; r < train.size(); ++r) row_of[static_cast<std::size_t>(train[r])] = r;
  const std::vector<int> teacher_val = predict(teacher, ds, splits.val);
  const std::vector<int> teacher_test = predict(teacher, ds, splits.test);

  const SubSeeds ss = sub_seeds(seed);
  auto params = student.trainable_params();
  auto state = SgdState::zeros_like(params);
  const std::size_t n = std::min(static_cast<std::size_t>(cfg.batch_size), train.size());
  const AugmentPipeline aug = cfg.augment_inputs ? preset(cfg.augment) : preset("none");

  RunMetrics metrics;
  metrics.seed = seed;
  double best_agreement = -1;
  int best_epoch = -1;
  Checkpoint best;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::int64_t> order = train;
    Rng(hash_combine64(ss.shuffle, static_cast<std::uint64_t>(epoch))).shuffle(order);
    double loss_sum = 0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at + n <= order.size(); at += n, ++steps) {
      Tape tape;
      params = student.trainable_params();
      for (auto* p : params) tape.watch(*p);
      const AugmentPipeline* pipe = aug.ops.empty() ? nullptr : &aug;
      Tensor s_logits = student.forward(tape, image_batch(ds, order, at, n, pipe, ss.aug, epoch, false), true);
      std::vector<float> rows(n * k);
      for (std::size_t j = 0; j < n; ++j)
        std::copy_n(t_logits.begin() + static_cast<std::ptrdiff_t>(row_of[static_cast<std::size_t>(order[at + j])] * k),
                    k, rows.begin() + static_cast<std::ptrdiff_t>(j * k));
      Tensor t_batch = tensor_from({static_cast<std::int64_t>(n), static_cast<std::int64_t>(k)}, std::move(rows));
      const std::vector<int> labels = labels_of(ds, order, at, n);
      Tensor loss = distillation_loss(tape, t_batch, s_logits, cfg.temperature, cfg.alpha,
                                      cfg.alpha > 0 ? &labels : nullptr);
      loss_sum += loss.scalar();
      GradMap grads = tape.backward(loss);
      sgd_step<float>(params, grads, state, cfg.optimizer);
    }
    metrics.add(epoch, "train", "loss", loss_sum / static_cast<double>(steps ? steps : 1));
    const double agree = agreement_rate(predict(student, ds, splits.val), teacher_val);
    metrics.add(epoch, "val", "agreement", agree);
    if (agree > best_agreement) {
      best_agreement = agree;
      best_epoch = epoch;
      best = assembly_checkpoint(student);
      best.step = static_cast<std::uint64_t>(epoch);
    }
    if (epoch - best_epoch >= cfg.early_stop_patience) break;
  }

  ModelAssembly best_student = load_assembly(best);
  best_student.encoder_frozen = student.encoder_frozen;
  metrics.add_final("val_agreement", best_agreement);
  metrics.add_final("teacher_agreement", agreement_rate(predict(best_student, ds, splits.test), teacher_test));
  metrics.add_final("test_accuracy", evaluate(best_student, ds, splits.test).accuracy);
  return {std::move(best), std::move(metrics)};
}

TransferTable transfer_run(const Checkpoint& encoder_ckpt, std::vector<ShapesSpec> datasets, FinetuneMode mode,
                           const SgdHyper& hyper, const std::string& augment_preset, const std::vector<int>& batch_sizes,
                           const std::vector<std::uint64_t>& seeds) {
  if (datasets.empty() || batch_sizes.empty() || seeds.empty())
    throw ConfigError("transfer_run: needs datasets, batch sizes and seeds");
  std::sort(datasets.begin(), datasets.end(),
            [](const ShapesSpec& a, const ShapesSpec& b) { return a.num_classes < b.num_classes; });
  const EncoderArch arch = parse_encoder_descriptor(encoder_ckpt.descriptor);
  const AugmentPipeline pipe = preset(augment_preset);

  TransferTable table;
  for (const auto& spec : datasets) {
    const ImageDataset ds = generate_shapes(spec);
    const DataSplits splits = split_and_subsample(ds, {1.0, true, 0});
    for (int bs : batch_sizes) {
      TransferCell cell;
      cell.classes = spec.num_classes;
      cell.batch_size = bs;
      for (std::uint64_t seed : seeds) {
        FinetuneResult r = finetune(&encoder_ckpt, arch, ds, splits, pipe, mode, hyper, bs, seed);
        cell.per_seed.push_back(r.metrics.latest("final", "test_accuracy"));
      }
      double sum = 0;
      for (double v : cell.per_seed) sum += v;
      cell.mean = sum / static_cast<double>(cell.per_seed.size());
      table.cells.push_back(std::move(cell));
    }
  }
  return table;
}

}  // namespace simcl
