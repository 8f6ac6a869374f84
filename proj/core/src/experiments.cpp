#include "simcl/experiments.hpp"

#include <atomic>
#include <chrono>
#include <exception>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "simcl/learn.hpp"
#include "simcl/metrics.hpp"

namespace simcl {
namespace {

using ordered_json = nlohmann::ordered_json;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string hex_fingerprint(std::uint64_t fp) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fp));
  return buf;
}

// metrics.csv + summary.json for one run directory. Wall-clock lives only in
// the summary so repeated runs stay byte-identical at the CSV level.
void persist_run(const fs::path& dir, const RunMetrics& metrics, const std::string& run_kind,
                 const std::string& label, double wall_seconds, ordered_json extra = {}) {
  fs::create_directories(dir);
  write_metrics_csv(metrics, dir / "metrics.csv");
  ordered_json s;
  s["kind"] = run_kind;
  s["label"] = label;
  s["seed"] = metrics.seed;
  s["config_fingerprint"] = hex_fingerprint(metrics.config_fingerprint);
  ordered_json finals = ordered_json::object();
  for (const auto& r : metrics.rows)
    if (r.split == "final") finals[r.metric] = r.value;
  s["finals"] = std::move(finals);
  s["wall_seconds"] = wall_seconds;
  for (auto it = extra.begin(); it != extra.end(); ++it) s[it.key()] = it.value();
  const fs::path tmp = dir / "summary.json.tmp";
  {
    std::ofstream f(tmp, std::ios::trunc);
    if (!f) throw IngestionError("cannot write " + tmp.string());
    f << s.dump(2) << "\n";
  }
  fs::rename(tmp, dir / "summary.json");
}

void write_root_summary(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "config.json", std::ios::trunc);
    if (!f) throw IngestionError("cannot write " + (dir / "config.json").string());
    f << cfg.normalized();
  }
  ordered_json s;
  s["kind"] = cfg.kind;
  s["label"] = cfg.name;
  s["config_fingerprint"] = hex_fingerprint(cfg.fingerprint());
  std::ofstream f(dir / "summary.json", std::ios::trunc);
  f << s.dump(2) << "\n";
}

SgdHyper make_hyper(const OptimConfig& o, int epochs, double lr_override = -1, double wd_override = -1) {
  SgdHyper h;
  h.learning_rate = lr_override >= 0 ? lr_override : o.learning_rate;
  h.momentum = o.momentum;
  h.weight_decay = wd_override >= 0 ? wd_override : o.weight_decay;
  h.epochs = epochs;
  return h;
}

ContrastConfig make_contrast(const ExperimentConfig& cfg) {
  ContrastConfig cc;
  cc.temperature = cfg.contrast.temperature;
  cc.batch_size = cfg.contrast.batch_size;
  cc.epochs = cfg.contrast.epochs;
  cc.optimizer = make_hyper(cfg.optim, cfg.contrast.epochs);
  return cc;
}

DistillConfig make_distill(const ExperimentConfig& cfg) {
  DistillConfig dc;
  dc.temperature = cfg.distill.temperature;
  dc.alpha = cfg.distill.alpha;
  dc.batch_size = cfg.distill.batch_size;
  dc.epochs = cfg.distill.epochs;
  dc.early_stop_patience = cfg.distill.patience;
  dc.augment_inputs = cfg.distill.augment_inputs;
  dc.augment = cfg.distill.augment;
  dc.optimizer = make_hyper(cfg.optim, cfg.distill.epochs);
  return dc;
}

EncoderArch arch_of(const ModelConfig& m) { return {m.family, m.width, m.depth}; }

std::vector<std::int64_t> all_train(const DataSplits& s) {
  std::vector<std::int64_t> out = s.labeled;
  out.insert(out.end(), s.unlabeled.begin(), s.unlabeled.end());
  std::sort(out.begin(), out.end());
  return out;
}

void parallel_over(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lk(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t width = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  pool.reserve(width);
  for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (first_error) std::rethrow_exception(first_error);
}

// ---- single-run drivers ----------------------------------------------------

void drive_pretrain(const ExperimentConfig& cfg, const fs::path& dir, const ImageDataset& ds, const DataSplits& splits,
                    std::uint64_t seed, const std::string& label) {
  const auto t0 = Clock::now();
  PretrainResult r = pretrain(ds, all_train(splits), preset(cfg.contrast.augment), arch_of(cfg.model),
                              cfg.model.proj_dim, make_contrast(cfg), seed);
  r.encoder.config_fingerprint = cfg.fingerprint();
  r.metrics.config_fingerprint = cfg.fingerprint();
  fs::create_directories(dir);
  save_checkpoint(r.encoder, dir / "encoder.ckpt");
  persist_run(dir, r.metrics, "pretrain", label, seconds_since(t0));
}

void drive_finetune(const ExperimentConfig& cfg, const fs::path& dir, const ImageDataset& ds, const DataSplits& splits,
                    const Checkpoint* encoder, const EncoderArch& arch, const std::string& preset_name,
                    const SgdHyper& hyper, int batch_size, std::uint64_t seed, const std::string& label,
                    HeadKind head, ordered_json extra = {}) {
  const auto t0 = Clock::now();
  FinetuneResult r = finetune(encoder, arch, ds, splits, preset(preset_name),
                              parse_finetune_mode(cfg.finetune.mode), hyper, batch_size, seed, head);
  r.metrics.config_fingerprint = cfg.fingerprint();
  fs::create_directories(dir);
  Checkpoint ckpt = assembly_checkpoint(r.model);
  ckpt.config_fingerprint = cfg.fingerprint();
  save_checkpoint(ckpt, dir / "model.ckpt");
  persist_run(dir, r.metrics, "finetune", label, seconds_since(t0), std::move(extra));
}

// ---- experiment kinds -------------------------------------------------------

void run_pretrain_kind(const ExperimentConfig& cfg, const fs::path& out) {
  const ImageDataset ds = build_dataset(cfg.data);
  const DataSplits splits = split_and_subsample(ds, {cfg.data.label_fraction, cfg.data.stratified, cfg.data.seed});
  drive_pretrain(cfg, out, ds, splits, cfg.seed, cfg.name);
}

void run_finetune_kind(const ExperimentConfig& cfg, const fs::path& out) {
  const ImageDataset ds = build_dataset(cfg.data);
  const DataSplits splits = split_and_subsample(ds, {cfg.data.label_fraction, cfg.data.stratified, cfg.data.seed});
  Checkpoint enc;
  const bool has_enc = !cfg.finetune.encoder.empty();
  if (has_enc) enc = load_checkpoint(cfg.finetune.encoder);
  const EncoderArch arch = has_enc ? parse_encoder_descriptor(enc.descriptor) : arch_of(cfg.model);
  const SgdHyper hyper =
      make_hyper(cfg.optim, cfg.finetune.epochs, cfg.finetune.learning_rate, cfg.finetune.weight_decay);
  drive_finetune(cfg, out, ds, splits, has_enc ? &enc : nullptr, arch, cfg.finetune.augment, hyper,
                 cfg.finetune.batch_size, cfg.seed, cfg.name,
                 cfg.finetune.head == "stack" ? HeadKind::kStack : HeadKind::kLinear);
}

void run_transfer_family(const ExperimentConfig& cfg, const fs::path& out, const std::vector<std::uint64_t>& seeds) {
  Checkpoint enc;
  if (!cfg.transfer.encoder.empty()) {
    enc = load_checkpoint(cfg.transfer.encoder);
  } else {
    const ImageDataset base = build_dataset(cfg.data);
    const DataSplits splits = split_and_subsample(base, {1.0, true, cfg.data.seed});
    drive_pretrain(cfg, out / "pretrain", base, splits, cfg.seed, "base");
    enc = load_checkpoint(out / "pretrain" / "encoder.ckpt");
  }
  std::vector<ShapesSpec> specs;
  for (int k : cfg.transfer.class_counts) {
    ShapesSpec s;
    s.num_classes = k;
    s.per_class = cfg.transfer.per_class;
    s.noise_std = cfg.transfer.noise_std;
    s.seed = hash_combine64(cfg.transfer.data_seed, static_cast<std::uint64_t>(k));
    specs.push_back(s);
  }
  const SgdHyper hyper = make_hyper(cfg.optim, cfg.transfer.epochs, cfg.transfer.learning_rate, cfg.transfer.weight_decay);
  TransferTable table = transfer_run(enc, specs, parse_finetune_mode(cfg.transfer.mode), hyper, cfg.transfer.augment,
                                     cfg.transfer.batch_sizes, seeds);
  for (const auto& cell : table.cells)
    for (std::size_t si = 0; si < cell.per_seed.size(); ++si) {
      RunMetrics m;
      m.seed = seeds[si];
      m.config_fingerprint = cfg.fingerprint();
      m.add_final("test_accuracy", cell.per_seed[si]);
      const std::string label = "k" + std::to_string(cell.classes) + "_bs" + std::to_string(cell.batch_size);
      ordered_json extra;
      extra["classes"] = cell.classes;
      extra["batch_size"] = cell.batch_size;
      persist_run(out / ("probe_" + label + "_s" + std::to_string(seeds[si])), m, "finetune", label, 0.0,
                  std::move(extra));
    }
}

void run_exp_augment(const ExperimentConfig& cfg, const fs::path& out, int threads) {
  const ImageDataset ds = build_dataset(cfg.data);
  const DataSplits splits = split_and_subsample(ds, {cfg.data.label_fraction, cfg.data.stratified, cfg.data.seed});
  const EncoderArch arch = arch_of(cfg.model);
  const SgdHyper probe_hyper =
      make_hyper(cfg.optim, cfg.finetune.epochs, cfg.finetune.learning_rate, cfg.finetune.weight_decay);
  parallel_over(cfg.seeds.size(), threads, [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    const fs::path pre_dir = out / ("pretrain_s" + std::to_string(seed));
    drive_pretrain(cfg, pre_dir, ds, splits, seed, "pretrain");
    const Checkpoint enc = load_checkpoint(pre_dir / "encoder.ckpt");
    for (const auto& preset_name : cfg.study.presets) {
      ordered_json extra;
      extra["preset"] = preset_name;
      drive_finetune(cfg, out / ("probe_" + preset_name + "_s" + std::to_string(seed)), ds, splits, &enc, arch,
                     preset_name, probe_hyper, cfg.finetune.batch_size, seed, preset_name, HeadKind::kLinear,
                     std::move(extra));
    }
  });
}

void run_exp_distill(const ExperimentConfig& cfg, const fs::path& out, int threads) {
  const ImageDataset ds = build_dataset(cfg.data);
  const DataSplits splits = split_and_subsample(ds, {cfg.data.label_fraction, cfg.data.stratified, cfg.data.seed});
  const DistillConfig dc = make_distill(cfg);
  parallel_over(cfg.seeds.size(), threads, [&](std::size_t si) {
    const std::uint64_t seed = cfg.seeds[si];
    // Teacher: wider encoder of the matched family, trained supervised.
    const EncoderArch teacher_arch{"mini_res", cfg.study.teacher_width, cfg.model.depth};
    const SgdHyper teacher_hyper = make_hyper(cfg.optim, cfg.study.teacher_epochs);
    const fs::path tdir = out / ("teacher_s" + std::to_string(seed));
    {
      const auto t0 = Clock::now();
      FinetuneResult tr = finetune(nullptr, teacher_arch, ds, splits, preset(cfg.study.teacher_augment),
                                   FinetuneMode::kFull, teacher_hyper, cfg.finetune.batch_size, seed);
      tr.metrics.config_fingerprint = cfg.fingerprint();
      fs::create_directories(tdir);
      Checkpoint tc = assembly_checkpoint(tr.model);
      tc.config_fingerprint = cfg.fingerprint();
      save_checkpoint(tc, tdir / "model.ckpt");
      persist_run(tdir, tr.metrics, "finetune", "teacher", seconds_since(t0));
    }
    ModelAssembly teacher = load_assembly(load_checkpoint(tdir / "model.ckpt"));
    for (const auto& family : cfg.study.student_families) {
      const auto t0 = Clock::now();
      const EncoderArch student_arch{family, cfg.model.width, cfg.model.depth};
      ModelAssembly student = assemble(build_encoder(student_arch, hash_combine64(seed, 1)),
                                       {HeadKind::kLinear, ds.num_classes, 0}, false, hash_combine64(seed, 2));
      DistillResult dr = distill(teacher, std::move(student), ds, splits, dc, seed);
      dr.metrics.config_fingerprint = cfg.fingerprint();
      const fs::path sdir = out / ("student_" + family + "_s" + std::to_string(seed));
      fs::create_directories(sdir);
      dr.student.config_fingerprint = cfg.fingerprint();
      save_checkpoint(dr.student, sdir / "student.ckpt");
      ordered_json extra;
      extra["student_family"] = family;
      persist_run(sdir, dr.metrics, "distill", family, seconds_since(t0), std::move(extra));
    }
  });
}

}  // namespace

ImageDataset build_dataset(const DataConfig& cfg) {
  if (cfg.source == "shapes") {
    ShapesSpec s;
    s.num_classes = cfg.classes;
    s.per_class = cfg.per_class;
    s.noise_std = cfg.noise_std;
    s.seed = cfg.seed;
    return generate_shapes(s);
  }
  if (cfg.source == "cifar10") return load_cifar(cfg.dir, CifarVariant::kCifar10);
  if (cfg.source == "cifar100") return load_cifar(cfg.dir, CifarVariant::kCifar100);
  throw ConfigError("unknown data source '" + cfg.source + "'");
}

void run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, int threads) {
  cfg.validate();
  write_root_summary(out_dir, cfg);
  if (cfg.kind == "pretrain") {
    run_pretrain_kind(cfg, out_dir);
  } else if (cfg.kind == "finetune") {
    run_finetune_kind(cfg, out_dir);
  } else if (cfg.kind == "distill") {
    const ImageDataset ds = build_dataset(cfg.data);
    const DataSplits splits = split_and_subsample(ds, {cfg.data.label_fraction, cfg.data.stratified, cfg.data.seed});
    ModelAssembly teacher = load_assembly(load_checkpoint(cfg.distill.teacher));
    ModelAssembly student;
    if (!cfg.distill.student_encoder.empty()) {
      const Checkpoint enc = load_checkpoint(cfg.distill.student_encoder);
      student = assemble(load_encoder(enc), {HeadKind::kLinear, ds.num_classes, 0}, false, hash_combine64(cfg.seed, 2));
    } else {
      student = assemble(build_encoder(arch_of(cfg.model), hash_combine64(cfg.seed, 1)),
                         {HeadKind::kLinear, ds.num_classes, 0}, false, hash_combine64(cfg.seed, 2));
    }
    const auto t0 = Clock::now();
    DistillResult dr = distill(teacher, std::move(student), ds, splits, make_distill(cfg), cfg.seed);
    dr.metrics.config_fingerprint = cfg.fingerprint();
    dr.student.config_fingerprint = cfg.fingerprint();
    fs::create_directories(out_dir);
    save_checkpoint(dr.student, out_dir / "student.ckpt");
    persist_run(out_dir, dr.metrics, "distill", cfg.name, seconds_since(t0));
  } else if (cfg.kind == "transfer") {
    run_transfer_family(cfg, out_dir, {cfg.seed});
  } else if (cfg.kind == "exp-transfer") {
    run_transfer_family(cfg, out_dir, cfg.seeds);
  } else if (cfg.kind == "exp-augment") {
    run_exp_augment(cfg, out_dir, threads);
  } else if (cfg.kind == "exp-distill") {
    run_exp_distill(cfg, out_dir, threads);
  } else {
    throw ConfigError("unknown experiment kind '" + cfg.kind + "'");
  }
}

}  // namespace simcl
