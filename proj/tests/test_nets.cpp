#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "simcl/errors.hpp"
#include "simcl/nets.hpp"
#include "simcl/rng.hpp"
#include "simcl/tensor.hpp"

using namespace simcl;

namespace {

Tensor random_batch(std::int64_t n, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(static_cast<std::size_t>(n * 3 * h * w));
  for (auto& x : v) x = static_cast<float>(rng.uniform());
  return tensor_from({n, 3, h, w}, std::move(v));
}

std::vector<float> all_params(Encoder& enc) {
  std::vector<float> out;
  enc.visit([&](const std::string&, Tensor& t) { out.insert(out.end(), t.vals().begin(), t.vals().end()); },
            [&](const std::string&, std::vector<float>& b) { out.insert(out.end(), b.begin(), b.end()); });
  return out;
}

}  // namespace

TEST_SUITE("nets") {

TEST_CASE("descriptor round-trips and validation rejects nonsense") {
  EncoderArch a;
  a.family = "mini_plain";
  a.width = 24;
  a.depth = 4;
  CHECK(a.descriptor() == "mini_plain/w24/d4");
  const EncoderArch b = parse_encoder_descriptor(a.descriptor());
  CHECK(b.family == a.family);
  CHECK(b.width == a.width);
  CHECK(b.depth == a.depth);

  CHECK_THROWS_AS(parse_encoder_descriptor("resnet50"), CompatibilityError);
  CHECK_THROWS_AS(parse_encoder_descriptor("mini_res/d3/w16"), CompatibilityError);

  EncoderArch bad;
  bad.family = "vgg";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.family = "mini_res";
  bad.width = 2;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.width = 16;
  bad.depth = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.depth = 6;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("feature dim doubles per stage") {
  EncoderArch a;
  a.width = 16;
  a.depth = 3;
  CHECK(a.feature_dim() == 64);
  a.width = 32;
  CHECK(a.feature_dim() == 128);
  a.depth = 1;
  CHECK(a.feature_dim() == 32);
}

TEST_CASE("parameter budgets are pinned") {
  EncoderArch res16{"mini_res", 16, 3};
  EncoderArch plain16{"mini_plain", 16, 3};
  EncoderArch res32{"mini_res", 32, 3};
  Encoder e1 = build_encoder(res16, 1);
  Encoder e2 = build_encoder(plain16, 1);
  Encoder e3 = build_encoder(res32, 1);
  CHECK(param_count(e1) == 77392);
  CHECK(param_count(e2) == 74640);
  CHECK(param_count(e3) == 307360);

  // The two student candidates sit within a +-10% budget of each other.
  const double ratio = static_cast<double>(param_count(e2)) / static_cast<double>(param_count(e1));
  CHECK(ratio > 0.9);
  CHECK(ratio < 1.1);

  // Linear 5-way head on top of the 64-d features adds 64*5 + 5.
  ModelAssembly m = assemble(build_encoder(res16, 1), {HeadKind::kLinear, 5, 0}, false, 2);
  CHECK(param_count(m) == 77392 + 325);
}

TEST_CASE("skip projections appear exactly where shape changes") {
  Encoder res = build_encoder({"mini_res", 16, 3}, 3);
  REQUIRE(res.stages.size() == 3);
  CHECK(!res.stages[0].skip.has_value());  // 16 -> 16, stride 1
  CHECK(res.stages[1].skip.has_value());   // 16 -> 32, stride 2
  CHECK(res.stages[2].skip.has_value());
  CHECK(res.stages[1].skip->w.shape == Shape{32, 16, 1, 1});

  Encoder plain = build_encoder({"mini_plain", 16, 3}, 3);
  for (const auto& s : plain.stages) CHECK(!s.skip.has_value());
}

TEST_CASE("builds are deterministic in the seed") {
  Encoder a = build_encoder({"mini_res", 8, 2}, 42);
  Encoder b = build_encoder({"mini_res", 8, 2}, 42);
  Encoder c = build_encoder({"mini_res", 8, 2}, 43);
  CHECK(all_params(a) == all_params(b));
  CHECK(all_params(a) != all_params(c));
}

TEST_CASE("forward maps [N,3,H,W] to [N, feature_dim] and validates input") {
  Encoder enc = build_encoder({"mini_res", 16, 3}, 5);
  Tape tape;
  const Tensor x = random_batch(2, 8, 8, 11);
  const Tensor f = enc.forward(tape, x, false);
  CHECK(f.shape == Shape{2, 64});

  CHECK_THROWS_AS(enc.forward(tape, tensor_from({2, 3, 8}, std::vector<float>(48, 0.1f)), false), ShapeError);
  CHECK_THROWS_AS(enc.forward(tape, tensor_from({2, 1, 8, 8}, std::vector<float>(128, 0.1f)), false), ShapeError);
}

TEST_CASE("eval features are independent of batch composition") {
  Encoder enc = build_encoder({"mini_res", 8, 2}, 9);
  const Tensor pair = random_batch(2, 8, 8, 21);
  const Tensor solo = tensor_from({1, 3, 8, 8}, std::vector<float>(pair.vals().begin(), pair.vals().begin() + 192));

  Tape t1, t2;
  const Tensor f_pair = enc.forward(t1, pair, false);
  const Tensor f_solo = enc.forward(t2, solo, false);
  for (std::int64_t j = 0; j < f_solo.numel(); ++j)
    CHECK(f_solo.vals()[static_cast<std::size_t>(j)] == f_pair.vals()[static_cast<std::size_t>(j)]);
}

TEST_CASE("training mode updates running stats, eval and frozen modes do not") {
  Encoder enc = build_encoder({"mini_res", 8, 2}, 13);
  const std::vector<float> before = enc.stem.bn.run_mean;
  const Tensor x = random_batch(2, 8, 8, 31);

  {
    Tape tape;
    enc.forward(tape, x, false);
    CHECK(enc.stem.bn.run_mean == before);
  }
  {
    ModelAssembly frozen = assemble(enc, {HeadKind::kLinear, 3, 0}, true, 1);
    Tape tape;
    frozen.forward(tape, x, true);  // training flag is overridden by the freeze
    CHECK(frozen.encoder.stem.bn.run_mean == before);
    CHECK(frozen.trainable_params().size() == 2);  // head w + b only
  }
  {
    Tape tape;
    enc.forward(tape, x, true);
    CHECK(enc.stem.bn.run_mean != before);
  }
}

TEST_CASE("head shapes follow the spec of each kind") {
  Encoder enc = build_encoder({"mini_res", 16, 3}, 1);

  ModelAssembly lin = assemble(enc, {HeadKind::kLinear, 5, 0}, true, 2);
  REQUIRE(lin.head_w.size() == 1);
  CHECK(lin.head_w[0].shape == Shape{64, 5});
  CHECK(lin.head_b[0].shape == Shape{5});

  ModelAssembly proj = assemble(enc, {HeadKind::kProjection, 32, 0}, false, 2);
  REQUIRE(proj.head_w.size() == 2);
  CHECK(proj.head_spec.hidden == 64);  // defaults to feature dim
  CHECK(proj.head_w[0].shape == Shape{64, 64});
  CHECK(proj.head_w[1].shape == Shape{64, 32});

  ModelAssembly stack = assemble(enc, {HeadKind::kStack, 5, 0}, false, 2);
  CHECK(stack.head_spec.hidden == 64);
  CHECK(stack.head_w[0].shape == Shape{64, 64});
  CHECK(stack.head_w[1].shape == Shape{64, 5});

  CHECK_THROWS_AS(assemble(enc, {HeadKind::kLinear, 0, 0}, false, 2), ConfigError);
}

TEST_CASE("projection head emits unit rows") {
  Encoder enc = build_encoder({"mini_res", 8, 2}, 17);
  ModelAssembly proj = assemble(enc, {HeadKind::kProjection, 16, 0}, false, 3);
  Tape tape;
  const Tensor z = proj.forward(tape, random_batch(4, 8, 8, 41), false);
  REQUIRE(z.shape == Shape{4, 16});
  for (int i = 0; i < 4; ++i) {
    double norm = 0;
    for (int j = 0; j < 16; ++j) {
      const double v = z.vals()[static_cast<std::size_t>(i * 16 + j)];
      norm += v * v;
    }
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-5);
  }
}

TEST_CASE("forward equals head_forward over encoder features") {
  Encoder enc = build_encoder({"mini_res", 8, 2}, 19);
  ModelAssembly m = assemble(enc, {HeadKind::kStack, 5, 0}, false, 7);
  const Tensor x = random_batch(3, 8, 8, 51);
  Tape t1, t2;
  const Tensor direct = m.forward(t1, x, false);
  const Tensor staged = m.head_forward(t2, m.encoder.forward(t2, x, false));
  CHECK(direct.vals() == staged.vals());
}

TEST_CASE("encoder checkpoints restore weights, buffers and outputs bitwise") {
  Encoder enc = build_encoder({"mini_res", 8, 2}, 23);
  // Give the running buffers non-initial values first.
  {
    Tape tape;
    enc.forward(tape, random_batch(2, 8, 8, 61), true);
  }
  const Checkpoint ckpt = encoder_checkpoint(enc);
  CHECK(ckpt.descriptor == "mini_res/w8/d2");
  Encoder back = load_encoder(ckpt);
  CHECK(all_params(back) == all_params(enc));

  const Tensor x = random_batch(2, 8, 8, 71);
  Tape t1, t2;
  CHECK(enc.forward(t1, x, false).vals() == back.forward(t2, x, false).vals());
}

TEST_CASE("checkpoint loads demand an exact entry match") {
  Encoder enc = build_encoder({"mini_res", 8, 2}, 29);
  Checkpoint missing = encoder_checkpoint(enc);
  missing.entries.erase(missing.entries.begin() + 1);
  CHECK_THROWS_AS(load_encoder(missing), CompatibilityError);

  Checkpoint extra = encoder_checkpoint(enc);
  extra.entries.emplace_back("enc.bonus", zeros({4}));
  CHECK_THROWS_AS(load_encoder(extra), CompatibilityError);

  Checkpoint wrong_shape = encoder_checkpoint(enc);
  wrong_shape.entries[0].second = zeros({3, 3});
  CHECK_THROWS_AS(load_encoder(wrong_shape), CompatibilityError);

  Checkpoint wrong_arch = encoder_checkpoint(enc);
  wrong_arch.descriptor = "mini_res/w16/d3";
  CHECK_THROWS_AS(load_encoder(wrong_arch), CompatibilityError);
}

TEST_CASE("assembly checkpoints round-trip including the head") {
  Encoder enc = build_encoder({"mini_res", 8, 2}, 31);
  ModelAssembly m = assemble(enc, {HeadKind::kProjection, 16, 0}, false, 5);
  const Checkpoint ckpt = assembly_checkpoint(m);
  CHECK(ckpt.descriptor == "mini_res/w8/d2+proj16/h16");

  ModelAssembly back = load_assembly(ckpt);
  CHECK(back.descriptor() == m.descriptor());
  const Tensor x = random_batch(2, 8, 8, 81);
  Tape t1, t2;
  CHECK(m.forward(t1, x, false).vals() == back.forward(t2, x, false).vals());

  Checkpoint bad = ckpt;
  bad.descriptor = "mini_res/w8/d2+warp16/h16";
  CHECK_THROWS_AS(load_assembly(bad), CompatibilityError);
}

TEST_CASE("load_encoder_into swaps pretrained weights under a matching arch") {
  Encoder donor = build_encoder({"mini_res", 8, 2}, 37);
  const Checkpoint ckpt = encoder_checkpoint(donor);

  ModelAssembly m = assemble(build_encoder({"mini_res", 8, 2}, 38), {HeadKind::kLinear, 4, 0}, true, 6);
  load_encoder_into(m, ckpt);
  const Tensor x = random_batch(2, 8, 8, 91);
  Tape t1, t2;
  CHECK(m.encoder.forward(t1, x, false).vals() == donor.forward(t2, x, false).vals());

  ModelAssembly other = assemble(build_encoder({"mini_plain", 8, 2}, 39), {HeadKind::kLinear, 4, 0}, true, 6);
  CHECK_THROWS_AS(load_encoder_into(other, ckpt), CompatibilityError);
}

}  // TEST_SUITE
