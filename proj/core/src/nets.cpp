#include "simcl/nets.hpp"

#include <cmath>

#include "simcl/errors.hpp"

namespace simcl {
namespace {

Tensor he_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::vector<float> v(static_cast<std::size_t>(numel_of(shape)));
  for (auto& x : v) x = static_cast<float>(rng.uniform(-limit, limit));
  return tensor_from(std::move(shape), std::move(v));
}

ConvBn make_conv_bn(int in_ch, int out_ch, int k, int stride, int pad, Rng& rng) {
  ConvBn cb;
  cb.w = he_uniform({out_ch, in_ch, k, k}, static_cast<std::int64_t>(in_ch) * k * k, rng);
  cb.bn.gamma = full({out_ch}, 1.0f);
  cb.bn.beta = zeros({out_ch});
  cb.bn.run_mean.assign(static_cast<std::size_t>(out_ch), 0.0f);
  cb.bn.run_var.assign(static_cast<std::size_t>(out_ch), 1.0f);
  cb.stride = stride;
  cb.pad = pad;
  return cb;
}

Tensor conv_bn_forward(Tape& tape, ConvBn& cb, const Tensor& x, bool training) {
  Tensor h = tape.conv2d(x, cb.w, cb.stride, cb.pad);
  return tape.batch_norm(h, cb.bn.gamma, cb.bn.beta, cb.bn.run_mean, cb.bn.run_var, training);
}

void visit_conv_bn(const std::string& prefix, ConvBn& cb,
                   const std::function<void(const std::string&, Tensor&)>& param,
                   const std::function<void(const std::string&, std::vector<float>&)>& buffer) {
  param(prefix + ".w", cb.w);
  param(prefix + ".gamma", cb.bn.gamma);
  param(prefix + ".beta", cb.bn.beta);
  buffer(prefix + ".mean", cb.bn.run_mean);
  buffer(prefix + ".var", cb.bn.run_var);
}

Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& b) {
  return tape.add(tape.matmul(x, w), b);
}

int head_fc_count(HeadKind k) { return k == HeadKind::kLinear ? 1 : 2; }

}  // namespace

void EncoderArch::validate() const {
  if (family != "mini_res" && family != "mini_plain") throw ConfigError("unknown encoder family '" + family + "'");
  if (width < 4) throw ConfigError("encoder width must be >= 4");
  if (depth < 1 || depth > 5) throw ConfigError("encoder depth must be in [1,5]");
}

EncoderArch parse_encoder_descriptor(const std::string& d) {
  EncoderArch a;
  const auto p1 = d.find("/w"), p2 = d.find("/d");
  if (p1 == std::string::npos || p2 == std::string::npos || p2 < p1)
    throw CompatibilityError("bad encoder descriptor '" + d + "'");
  a.family = d.substr(0, p1);
  a.width = std::stoi(d.substr(p1 + 2, p2 - p1 - 2));
  a.depth = std::stoi(d.substr(p2 + 2));
  a.validate();
  return a;
}

Tensor Encoder::forward(Tape& tape, const Tensor& x, bool training) {
  if (x.rank() != 4 || x.shape[1] != 3) throw ShapeError("encoder expects [N,3,H,W], got " + shape_str(x.shape));
  Tensor h = tape.relu(conv_bn_forward(tape, stem, x, training));
  for (auto& blk : stages) {
    Tensor main = conv_bn_forward(tape, blk.c1, h, training);
    main = tape.relu(main);
    main = conv_bn_forward(tape, blk.c2, main, training);
    if (arch.residual()) {
      Tensor sc = blk.skip ? conv_bn_forward(tape, *blk.skip, h, training) : h;
      main = tape.add(main, sc);
    }
    h = tape.relu(main);
  }
  return tape.avg_pool_global(h);
}

void Encoder::visit(const std::function<void(const std::string&, Tensor&)>& param,
                    const std::function<void(const std::string&, std::vector<float>&)>& buffer) {
  visit_conv_bn("enc.stem", stem, param, buffer);
  for (std::size_t s = 0; s < stages.size(); ++s) {
    const std::string base = "enc.s" + std::to_string(s);
    visit_conv_bn(base + ".c1", stages[s].c1, param, buffer);
    visit_conv_bn(base + ".c2", stages[s].c2, param, buffer);
    if (stages[s].skip) visit_conv_bn(base + ".skip", *stages[s].skip, param, buffer);
  }
}

Encoder build_encoder(const EncoderArch& arch, std::uint64_t seed) {
  arch.validate();
  Encoder enc;
  enc.arch = arch;
  Rng rng(seed);
  enc.stem = make_conv_bn(3, arch.width, 3, 1, 1, rng);
  int in_ch = arch.width;
  for (int s = 0; s < arch.depth; ++s) {
    const int out_ch = arch.width << s;
    const int stride = s == 0 ? 1 : 2;
    StageBlock blk;
    blk.c1 = make_conv_bn(in_ch, out_ch, 3, stride, 1, rng);
    blk.c2 = make_conv_bn(out_ch, out_ch, 3, 1, 1, rng);
    if (arch.residual() && (in_ch != out_ch || stride != 1)) blk.skip = make_conv_bn(in_ch, out_ch, 1, stride, 0, rng);
    enc.stages.push_back(std::move(blk));
    in_ch = out_ch;
  }
  return enc;
}

Checkpoint encoder_checkpoint(Encoder& enc) {
  Checkpoint ckpt;
  ckpt.descriptor = enc.arch.descriptor();
  enc.visit([&](const std::string& n, Tensor& t) { ckpt.entries.emplace_back(n, t); },
            [&](const std::string& n, std::vector<float>& b) {
              ckpt.entries.emplace_back(n, tensor_from({static_cast<std::int64_t>(b.size())}, b));
            });
  return ckpt;
}

namespace {

// Overwrites every visited parameter/buffer from same-named checkpoint
// entries; requires an exact one-to-one match.
template <typename Visitable>
void fill_from_checkpoint(Visitable& target, const Checkpoint& ckpt) {
  std::size_t used = 0;
  target.visit(
      [&](const std::string& n, Tensor& t) {
        const Tensor* src = ckpt.find(n);
        if (!src) throw CompatibilityError("checkpoint is missing entry '" + n + "'");
        if (src->shape != t.shape)
          throw CompatibilityError("checkpoint entry '" + n + "' has shape " + shape_str(src->shape) + ", expected " +
                                   shape_str(t.shape));
        t = *src;
        ++used;
      },
      [&](const std::string& n, std::vector<float>& b) {
        const Tensor* src = ckpt.find(n);
        if (!src) throw CompatibilityError("checkpoint is missing entry '" + n + "'");
        if (src->numel() != static_cast<std::int64_t>(b.size()))
          throw CompatibilityError("checkpoint entry '" + n + "' has wrong length");
        b = src->vals();
        ++used;
      });
  if (used != ckpt.entries.size())
    throw CompatibilityError("checkpoint has " + std::to_string(ckpt.entries.size()) + " entries, model expects " +
                             std::to_string(used));
}

}  // namespace

Encoder load_encoder(const Checkpoint& ckpt) {
  Encoder enc = build_encoder(parse_encoder_descriptor(ckpt.descriptor), 0);
  fill_from_checkpoint(enc, ckpt);
  return enc;
}

std::string head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::kProjection: return "proj";
    case HeadKind::kLinear: return "linear";
    default: return "stack";
  }
}

Tensor ModelAssembly::forward(Tape& tape, const Tensor& x, bool training) {
  return head_forward(tape, encoder.forward(tape, x, training && !encoder_frozen));
}

Tensor ModelAssembly::head_forward(Tape& tape, const Tensor& f) {
  switch (head_spec.kind) {
    case HeadKind::kProjection: {
      Tensor h = tape.relu(affine(tape, f, head_w[0], head_b[0]));
      return tape.l2_normalize_rows(affine(tape, h, head_w[1], head_b[1]));
    }
    case HeadKind::kLinear:
      return affine(tape, f, head_w[0], head_b[0]);
    default: {
      Tensor h = tape.relu(affine(tape, f, head_w[0], head_b[0]));
      return affine(tape, h, head_w[1], head_b[1]);
    }
  }
}

std::vector<Tensor*> ModelAssembly::trainable_params() {
  std::vector<Tensor*> out;
  if (!encoder_frozen)
    encoder.visit([&](const std::string&, Tensor& t) { out.push_back(&t); },
                  [](const std::string&, std::vector<float>&) {});
  for (auto& w : head_w) out.push_back(&w);
  for (auto& b : head_b) out.push_back(&b);
  return out;
}

std::string ModelAssembly::descriptor() const {
  return encoder.arch.descriptor() + "+" + head_kind_name(head_spec.kind) + std::to_string(head_spec.out_dim) + "/h" +
         std::to_string(head_spec.hidden);
}

void ModelAssembly::visit(const std::function<void(const std::string&, Tensor&)>& param,
                          const std::function<void(const std::string&, std::vector<float>&)>& buffer) {
  encoder.visit(param, buffer);
  for (std::size_t i = 0; i < head_w.size(); ++i) {
    param("head.fc" + std::to_string(i + 1) + ".w", head_w[i]);
    param("head.fc" + std::to_string(i + 1) + ".b", head_b[i]);
  }
}

ModelAssembly assemble(Encoder encoder, const HeadSpec& head, bool freeze_encoder, std::uint64_t head_seed) {
  if (head.out_dim < 1) throw ConfigError("head out_dim must be >= 1");
  ModelAssembly m;
  m.encoder = std::move(encoder);
  m.head_spec = head;
  if (m.head_spec.hidden == 0)
    m.head_spec.hidden = head.kind == HeadKind::kProjection ? m.encoder.arch.feature_dim() : 64;
  m.encoder_frozen = freeze_encoder;
  Rng rng(head_seed);
  const int d = m.encoder.arch.feature_dim();
  if (head_fc_count(head.kind) == 1) {
    m.head_w.push_back(he_uniform({d, m.head_spec.out_dim}, d, rng));
    m.head_b.push_back(zeros({m.head_spec.out_dim}));
  } else {
    m.head_w.push_back(he_uniform({d, m.head_spec.hidden}, d, rng));
    m.head_b.push_back(zeros({m.head_spec.hidden}));
    m.head_w.push_back(he_uniform({m.head_spec.hidden, m.head_spec.out_dim}, m.head_spec.hidden, rng));
    m.head_b.push_back(zeros({m.head_spec.out_dim}));
  }
  return m;
}

Checkpoint assembly_checkpoint(ModelAssembly& model) {
  Checkpoint ckpt;
  ckpt.descriptor = model.descriptor();
  model.visit([&](const std::string& n, Tensor& t) { ckpt.entries.emplace_back(n, t); },
              [&](const std::string& n, std::vector<float>& b) {
                ckpt.entries.emplace_back(n, tensor_from({static_cast<std::int64_t>(b.size())}, b));
              });
  return ckpt;
}

ModelAssembly load_assembly(const Checkpoint& ckpt) {
  // Descriptor: <family>/w<W>/d<D>+<head><out>/h<hidden>
  const auto plus = ckpt.descriptor.find('+');
  if (plus == std::string::npos) throw CompatibilityError("bad assembly descriptor '" + ckpt.descriptor + "'");
  const EncoderArch arch = parse_encoder_descriptor(ckpt.descriptor.substr(0, plus));
  const std::string rest = ckpt.descriptor.substr(plus + 1);
  const auto slash = rest.find("/h");
  if (slash == std::string::npos) throw CompatibilityError("bad assembly descriptor '" + ckpt.descriptor + "'");
  HeadSpec spec;
  std::size_t digits = rest.find_first_of("0123456789");
  if (digits == std::string::npos || digits > slash) throw CompatibilityError("bad assembly descriptor '" + ckpt.descriptor + "'");
  const std::string kind = rest.substr(0, digits);
  if (kind == "proj") spec.kind = HeadKind::kProjection;
  else if (kind == "linear") spec.kind = HeadKind::kLinear;
  else if (kind == "stack") spec.kind = HeadKind::kStack;
  else throw CompatibilityError("unknown head kind '" + kind + "'");
  spec.out_dim = std::stoi(rest.substr(digits, slash - digits));
  spec.hidden = std::stoi(rest.substr(slash + 2));
  ModelAssembly m = assemble(build_encoder(arch, 0), spec, false, 0);
  fill_from_checkpoint(m, ckpt);
  return m;
}

void load_encoder_into(ModelAssembly& model, const Checkpoint& encoder_ckpt) {
  if (encoder_ckpt.descriptor != model.encoder.arch.descriptor())
    throw CompatibilityError("encoder checkpoint is '" + encoder_ckpt.descriptor + "' but model wants '" +
                             model.encoder.arch.descriptor() + "'");
  fill_from_checkpoint(model.encoder, encoder_ckpt);
}

std::int64_t param_count(Encoder& enc) {
  std::int64_t n = 0;
  enc.visit([&](const std::string&, Tensor& t) { n += t.numel(); }, [](const std::string&, std::vector<float>&) {});
  return n;
}

std::int64_t param_count(ModelAssembly& model) {
  std::int64_t n = param_count(model.encoder);
  for (auto& w : model.head_w) n += w.numel();
  for (auto& b : model.head_b) n += b.numel();
  return n;
}

}  // namespace simcl
