#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "simcl/checkpoint.hpp"
#include "simcl/rng.hpp"
#include "simcl/tensor.hpp"

namespace simcl {

// Small convolutional backbone family. Width is the stem channel count,
// depth the number of stages; stage s runs at width * 2^s channels and
// stages past the first halve the spatial extent. "mini_res" adds shortcut
// connections around each stage block, "mini_plain" is the same stack
// without them.
struct EncoderArch {
  std::string family = "mini_res";  // mini_res | mini_plain
  int width = 16;
  int depth = 3;

  int feature_dim() const { return width << (depth - 1); }
  bool residual() const { return family == "mini_res"; }
  std::string descriptor() const { return family + "/w" + std::to_string(width) + "/d" + std::to_string(depth); }
  void validate() const;
};

EncoderArch parse_encoder_descriptor(const std::string& descriptor);

struct BnLayer {
  Tensor gamma, beta;
  std::vector<float> run_mean, run_var;
};

struct ConvBn {
  Tensor w;  // [out, in, k, k]
  BnLayer bn;
  int stride = 1;
  int pad = 1;
};

struct StageBlock {
  ConvBn c1, c2;
  std::optional<ConvBn> skip;  // 1x1 projection when shape changes (mini_res only)
};

struct Encoder {
  EncoderArch arch;
  ConvBn stem;
  std::vector<StageBlock> stages;

  // x: [N,3,H,W] -> features [N, feature_dim]. Training mode uses batch
  // statistics and updates the running buffers; eval mode is batch-independent.
  Tensor forward(Tape& tape, const Tensor& x, bool training);

  void visit(const std::function<void(const std::string&, Tensor&)>& param,
             const std::function<void(const std::string&, std::vector<float>&)>& buffer);
};

Encoder build_encoder(const EncoderArch& arch, std::uint64_t seed);
Checkpoint encoder_checkpoint(Encoder& enc);                 // descriptor = arch descriptor
Encoder load_encoder(const Checkpoint& ckpt);                // throws CompatibilityError on mismatch

enum class HeadKind { kProjection, kLinear, kStack };

std::string head_kind_name(HeadKind k);

// Projection: affine d->d, relu, affine d->proj_dim, row l2-normalize.
// Linear: affine d->classes. Stack: affine d->64, relu, affine 64->classes.
struct HeadSpec {
  HeadKind kind = HeadKind::kLinear;
  int out_dim = 0;      // proj_dim or class count
  int hidden = 0;       // 0 = default (d for projection, 64 for stack)
};

struct ModelAssembly {
  Encoder encoder;
  HeadSpec head_spec;
  std::vector<Tensor> head_w;  // fc weights in order
  std::vector<Tensor> head_b;
  bool encoder_frozen = false;

  // Frozen encoders always run in eval mode and contribute no trainable
  // parameters, so their outputs never depend on batch composition.
  Tensor forward(Tape& tape, const Tensor& x, bool training);
  // Head applied to precomputed features [N, feature_dim].
  Tensor head_forward(Tape& tape, const Tensor& features);
  std::vector<Tensor*> trainable_params();
  std::string descriptor() const;
  void visit(const std::function<void(const std::string&, Tensor&)>& param,
             const std::function<void(const std::string&, std::vector<float>&)>& buffer);
};

ModelAssembly assemble(Encoder encoder, const HeadSpec& head, bool freeze_encoder, std::uint64_t head_seed);
Checkpoint assembly_checkpoint(ModelAssembly& model);
ModelAssembly load_assembly(const Checkpoint& ckpt);
// Replaces the encoder weights of `model` with those in an encoder checkpoint.
void load_encoder_into(ModelAssembly& model, const Checkpoint& encoder_ckpt);

std::int64_t param_count(ModelAssembly& model);   // trainable + frozen params, not running buffers
std::int64_t param_count(Encoder& enc);

}  // namespace simcl
