#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "simcl/augment.hpp"
#include "simcl/checkpoint.hpp"
#include "simcl/dataio.hpp"
#include "simcl/metrics.hpp"
#include "simcl/nets.hpp"
#include "simcl/optim.hpp"
#include "simcl/tensor.hpp"

namespace simcl {

struct ContrastConfig {
  double temperature = 1.0;
  int batch_size = 64;  // N source images per step (the model sees 2N views)
  int epochs = 10;
  SgdHyper optimizer;
};

struct DistillConfig {
  double temperature = 1.0;
  double alpha = 0.0;  // weight on ground-truth cross-entropy
  int batch_size = 64;
  int epochs = 30;
  int early_stop_patience = 10;
  bool augment_inputs = false;  // teacher-forcing batches are clean by default
  std::string augment = "none";
  SgdHyper optimizer;
};

// Contrastive loss over 2N embeddings interleaved as (x1_0, x2_0, x1_1, ...).
// Rows are renormalized internally; the positive of row i is row i^1. Built
// entirely from tape primitives, so gradients come from the reverse pass.
template <typename S>
TensorT<S> nt_xent_loss(TapeT<S>& tape, const TensorT<S>& z, double temperature) {
  if (!(temperature > 0)) throw ConfigError("nt_xent_loss: temperature must be positive");
  if (z.rank() != 2) throw ShapeError("nt_xent_loss: expects [2N,d], got " + shape_str(z.shape));
  const std::int64_t rows = z.shape[0];
  if (rows < 4 || rows % 2 != 0) throw ContractError("nt_xent_loss: needs an even batch of at least 4 views");

  TensorT<S> zn = tape.l2_normalize_rows(z);
  TensorT<S> sim = tape.matmul(zn, zn, /*transpose_b=*/true);
  TensorT<S> scaled = tape.mul(sim, full<S>({rows, rows}, static_cast<S>(1.0 / temperature)));

  // Self-similarities get a large negative offset: finite, but exp-underflows
  // to zero in the row softmax.
  std::vector<S> mask(static_cast<std::size_t>(rows * rows), S(0));
  for (std::int64_t i = 0; i < rows; ++i) mask[static_cast<std::size_t>(i * rows + i)] = S(-1e9);
  TensorT<S> logp = tape.log_softmax_rows(tape.add(scaled, tensor_from<S>({rows, rows}, std::move(mask))));

  std::vector<S> pos(static_cast<std::size_t>(rows * rows), S(0));
  for (std::int64_t i = 0; i < rows; ++i) pos[static_cast<std::size_t>(i * rows + (i ^ 1))] = S(1);
  TensorT<S> picked = tape.mul(logp, tensor_from<S>({rows, rows}, std::move(pos)));
  return tape.mul(tape.mean_all(picked), scalar_tensor<S>(static_cast<S>(-rows)));
}

// Mean cross-entropy with integer labels at unit temperature.
template <typename S>
TensorT<S> softmax_cross_entropy(TapeT<S>& tape, const TensorT<S>& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("softmax_cross_entropy: expects [N,K]");
  const std::int64_t n = logits.shape[0], k = logits.shape[1];
  if (static_cast<std::int64_t>(labels.size()) != n) throw ShapeError("softmax_cross_entropy: label count mismatch");
  std::vector<S> onehot(static_cast<std::size_t>(n * k), S(0));
  for (std::int64_t i = 0; i < n; ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k)
      throw ContractError("softmax_cross_entropy: label out of range");
    onehot[static_cast<std::size_t>(i * k + labels[static_cast<std::size_t>(i)])] = S(1);
  }
  TensorT<S> picked = tape.mul(tape.log_softmax_rows(logits), tensor_from<S>({n, k}, std::move(onehot)));
  return tape.mul(tape.mean_all(picked), scalar_tensor<S>(static_cast<S>(-k)));
}

namespace detail {
// Same max-subtracted log-softmax arithmetic as the tape op, applied to
// constant (teacher) rows. Bitwise agreement is what makes the distillation
// loss exactly zero when student == teacher.
template <typename S>
void log_softmax_row(const S* row, std::int64_t k, S* out) {
  S mx = row[0];
  for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
  S sum = 0;
  for (std::int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
  const S lse = mx + std::log(sum);
  for (std::int64_t j = 0; j < k; ++j) out[j] = row[j] - lse;
}
}  // namespace detail

// alpha * CE(labels, student) + (1-alpha) * tau_d^2 * KL(p_t || q_tau),
// p_t = softmax(teacher / tau_d), q_tau = softmax(student / tau_d). Teacher
// logits are constants; gradients flow through the student branch only.
template <typename S>
TensorT<S> distillation_loss(TapeT<S>& tape, const TensorT<S>& teacher_logits, const TensorT<S>& student_logits,
                             double tau_d, double alpha, const std::vector<int>* labels) {
  if (!(tau_d > 0)) throw ConfigError("distillation_loss: temperature must be positive");
  if (alpha < 0 || alpha > 1) throw ConfigError("distillation_loss: alpha must be in [0,1]");
  if (teacher_logits.shape != student_logits.shape || student_logits.rank() != 2)
    throw ShapeError("distillation_loss: teacher " + shape_str(teacher_logits.shape) + " vs student " +
                     shape_str(student_logits.shape));
  if (alpha > 0 && labels == nullptr) throw ContractError("distillation_loss: alpha > 0 requires labels");

  const std::int64_t n = student_logits.shape[0], k = student_logits.shape[1];

  std::optional<TensorT<S>> ce;
  if (alpha > 0) ce = softmax_cross_entropy(tape, student_logits, *labels);
  if (alpha == 1) return *ce;

  const S inv_tau = static_cast<S>(1.0 / tau_d);
  std::vector<S> scaled_t(static_cast<std::size_t>(n * k));
  for (std::size_t i = 0; i < scaled_t.size(); ++i) scaled_t[i] = teacher_logits.vals()[i] * inv_tau;
  std::vector<S> logp(static_cast<std::size_t>(n * k));
  for (std::int64_t i = 0; i < n; ++i) detail::log_softmax_row(scaled_t.data() + i * k, k, logp.data() + i * k);
  std::vector<S> p(logp.size());
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = std::exp(logp[i]);

  TensorT<S> logq = tape.log_softmax_rows(tape.mul(student_logits, full<S>({n, k}, inv_tau)));
  TensorT<S> diff = tape.add(tensor_from<S>({n, k}, std::move(logp)), tape.mul(logq, full<S>({n, k}, S(-1))));
  TensorT<S> terms = tape.mul(tensor_from<S>({n, k}, std::move(p)), diff);
  TensorT<S> kd = tape.mul(tape.mean_all(terms), scalar_tensor<S>(static_cast<S>(k * tau_d * tau_d)));

  if (alpha == 0) return kd;
  return tape.add(tape.mul(*ce, scalar_tensor<S>(static_cast<S>(alpha))),
                  tape.mul(kd, scalar_tensor<S>(static_cast<S>(1 - alpha))));
}

// ---- training procedures (float engine) -----------------------------------

struct PretrainResult {
  Checkpoint encoder;
  RunMetrics metrics;
};

PretrainResult pretrain(const ImageDataset& ds, const std::vector<std::int64_t>& unlabeled,
                        const AugmentPipeline& pipeline, const EncoderArch& arch, int proj_dim,
                        const ContrastConfig& cfg, std::uint64_t seed);

enum class FinetuneMode { kLinearProbe, kFull };

FinetuneMode parse_finetune_mode(const std::string& s);

struct FinetuneResult {
  ModelAssembly model;
  RunMetrics metrics;
};

// encoder_ckpt == nullptr trains from fresh random weights.
FinetuneResult finetune(const Checkpoint* encoder_ckpt, const EncoderArch& arch, const ImageDataset& ds,
                        const DataSplits& splits, const AugmentPipeline& pipeline, FinetuneMode mode,
                        const SgdHyper& hyper, int batch_size, std::uint64_t seed,
                        HeadKind head_kind = HeadKind::kLinear);

struct EvalResult {
  double accuracy = 0;
  std::vector<double> per_class;
  std::vector<int> predictions;  // aligned with the index list
};

EvalResult evaluate(ModelAssembly& model, const ImageDataset& ds, const std::vector<std::int64_t>& indices);

struct DistillResult {
  Checkpoint student;  // best validation-agreement snapshot
  RunMetrics metrics;
};

DistillResult distill(ModelAssembly& teacher, ModelAssembly student, const ImageDataset& ds, const DataSplits& splits,
                      const DistillConfig& cfg, std::uint64_t seed);

struct TransferCell {
  int classes = 0;
  int batch_size = 0;
  std::vector<double> per_seed;
  double mean = 0;
};

struct TransferTable {
  std::vector<TransferCell> cells;  // sorted by (classes, batch_size)
};

TransferTable transfer_run(const Checkpoint& encoder_ckpt, std::vector<ShapesSpec> datasets, FinetuneMode mode,
                           const SgdHyper& hyper, const std::string& augment_preset, const std::vector<int>& batch_sizes,
                           const std::vector<std::uint64_t>& seeds);

}  // namespace simcl
