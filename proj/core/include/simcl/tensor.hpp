#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "simcl/errors.hpp"

namespace simcl {

using Shape = std::vector<std::int64_t>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) {
    if (e < 0) throw ShapeError("negative extent in shape");
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

constexpr std::int64_t kNoNode = -1;

// N-dimensional array of scalars in row-major order. The element buffer is
// immutable and shared between copies; `node` ties the tensor to the tape
// that recorded it (meaningless for any other tape).
template <typename S>
struct TensorT {
  Shape shape;
  std::shared_ptr<const std::vector<S>> data;
  std::int64_t node = kNoNode;
  std::uint64_t tape_id = 0;
  bool requires_grad = false;

  TensorT() : data(std::make_shared<const std::vector<S>>()) {}
  TensorT(Shape s, std::shared_ptr<const std::vector<S>> d) : shape(std::move(s)), data(std::move(d)) {}

  std::int64_t numel() const { return numel_of(shape); }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
  const std::vector<S>& vals() const { return *data; }
  const S* ptr() const { return data->data(); }

  S scalar() const {
    if (numel() != 1) throw ContractError("scalar() on tensor of " + std::to_string(numel()) + " elements");
    return (*data)[0];
  }
};

template <typename S>
TensorT<S> tensor_from(Shape shape, std::vector<S> values) {
  const std::int64_t n = numel_of(shape);
  if (static_cast<std::int64_t>(values.size()) != n)
    throw ShapeError("tensor_from: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
  for (S v : values)
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("tensor_from: non-finite input value");
  return TensorT<S>(std::move(shape), std::make_shared<const std::vector<S>>(std::move(values)));
}

template <typename S>
TensorT<S> full(Shape shape, S value) {
  const std::int64_t n = numel_of(shape);
  return TensorT<S>(std::move(shape), std::make_shared<const std::vector<S>>(static_cast<std::size_t>(n), value));
}

template <typename S>
TensorT<S> zeros(Shape shape) {
  return full<S>(std::move(shape), S(0));
}

template <typename S>
TensorT<S> scalar_tensor(S value) {
  return tensor_from<S>({}, {value});
}

// Brace-friendly float spellings: tensor_from({2,2}, {1,0,0,1}).
inline TensorT<float> tensor_from(Shape shape, std::vector<float> values) {
  return tensor_from<float>(std::move(shape), std::move(values));
}
inline TensorT<float> full(Shape shape, float value) { return full<float>(std::move(shape), value); }
inline TensorT<float> zeros(Shape shape) { return zeros<float>(std::move(shape)); }
inline TensorT<float> scalar_tensor(float value) { return scalar_tensor<float>(value); }

// Gradients of one backward pass, keyed by tape node id.
template <typename S>
class GradMapT {
 public:
  GradMapT() = default;
  explicit GradMapT(std::uint64_t tape_id) : tape_id_(tape_id) {}

  bool contains(std::int64_t node) const { return grads_.count(node) != 0; }

  const TensorT<S>& at(std::int64_t node) const {
    auto it = grads_.find(node);
    if (it == grads_.end()) throw ContractError("gradient map: unknown node id " + std::to_string(node));
    return it->second;
  }

  // Gradient for a watched leaf, by the tensor that was watched.
  const TensorT<S>& at(const TensorT<S>& leaf) const {
    if (leaf.tape_id != tape_id_ || leaf.node == kNoNode)
      throw ContractError("gradient map: tensor was not watched on this tape");
    return at(leaf.node);
  }

  void put(std::int64_t node, TensorT<S> g) { grads_[node] = std::move(g); }
  std::size_t size() const { return grads_.size(); }

 private:
  std::uint64_t tape_id_ = 0;
  std::unordered_map<std::int64_t, TensorT<S>> grads_;
};

namespace detail {
template <typename S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MapM = Eigen::Map<MatRM<S>>;
template <typename S>
using MapCM = Eigen::Map<const MatRM<S>>;

template <typename S>
using ArrMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using CArrMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

template <typename S>
inline void check_finite(const std::vector<S>& v, const char* op) {
  if (!v.empty() &&
      !CArrMap<S>(v.data(), static_cast<Eigen::Index>(v.size())).allFinite())
    throw NumericError(std::string(op) + ": non-finite result");
}

// Horizontal reductions with a fixed lane pattern. Eigen's redux peels to an
// aligned boundary first, so its summation order depends on the buffer's
// runtime address — run-to-run reproducibility (and batch-composition
// invariance) would be at the allocator's mercy. These depend only on n.
inline constexpr std::int64_t kLanes = 8;

template <typename S>
inline S sum(const S* p, std::int64_t n) {
  S lane[kLanes] = {};
  std::int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::int64_t l = 0; l < kLanes; ++l) lane[l] += p[i + l];
  S acc = 0;
  for (std::int64_t l = 0; l < kLanes; ++l) acc += lane[l];
  for (; i < n; ++i) acc += p[i];
  return acc;
}

template <typename S>
inline S dot(const S* p, const S* q, std::int64_t n) {
  S lane[kLanes] = {};
  std::int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::int64_t l = 0; l < kLanes; ++l) lane[l] += p[i + l] * q[i + l];
  S acc = 0;
  for (std::int64_t l = 0; l < kLanes; ++l) acc += lane[l];
  for (; i < n; ++i) acc += p[i] * q[i];
  return acc;
}

template <typename S>
inline S sq_dev_sum(const S* p, std::int64_t n, S mu) {
  S lane[kLanes] = {};
  std::int64_t i = 0;
  for (; i + kLanes <= n; i += kLanes)
    for (std::int64_t l = 0; l < kLanes; ++l) {
      const S d = p[i + l] - mu;
      lane[l] += d * d;
    }
  S acc = 0;
  for (std::int64_t l = 0; l < kLanes; ++l) acc += lane[l];
  for (; i < n; ++i) {
    const S d = p[i] - mu;
    acc += d * d;
  }
  return acc;
}

inline std::uint64_t next_tape_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}
}  // namespace detail

// Reverse-mode tape. Primitives compute eagerly; an application is recorded
// iff at least one input is tracked on this tape (a watched leaf or the
// output of a recorded application). One backward per recorded forward;
// reset() clears the recording and invalidates outstanding node ids.
template <typename S>
class TapeT {
 public:
  TapeT() : id_(detail::next_tape_id()) {}
  TapeT(const TapeT&) = delete;
  TapeT& operator=(const TapeT&) = delete;

  std::uint64_t id() const { return id_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  // Registers `t` as a gradient leaf of this tape.
  TensorT<S>& watch(TensorT<S>& t) {
    t.requires_grad = true;
    if (t.tape_id == id_ && t.node != kNoNode) return t;
    Node n;
    n.op = Op::kLeaf;
    n.out = t;
    n.needs_grad = true;
    t.node = push(std::move(n));
    t.tape_id = id_;
    nodes_[static_cast<std::size_t>(t.node)].out = t;
    return t;
  }

  void reset() {
    nodes_.clear();
    backward_done_ = false;
    id_ = detail::next_tape_id();
  }

  // ---- primitives -------------------------------------------------------

  TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    const bool bias = a.rank() == 2 && b.rank() == 1 && a.shape[1] == b.shape[0];
    if (!bias && a.shape != b.shape)
      throw ShapeError("add: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    std::vector<S> out(a.vals().size());
    if (bias) {
      const std::int64_t n = a.shape[0], d = a.shape[1];
      detail::CArrMap<S> vb(b.ptr(), d);
      for (std::int64_t i = 0; i < n; ++i)
        detail::ArrMap<S>(out.data() + i * d, d) = detail::CArrMap<S>(a.ptr() + i * d, d) + vb;
    } else {
      detail::ArrMap<S>(out.data(), out.size()) =
          detail::CArrMap<S>(a.ptr(), out.size()) + detail::CArrMap<S>(b.ptr(), out.size());
    }
    detail::check_finite(out, "add");
    return record(Op::kAdd, {a, b}, TensorT<S>(a.shape, share(std::move(out))));
  }

  TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape != b.shape) throw ShapeError("mul: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    std::vector<S> out(a.vals().size());
    detail::ArrMap<S>(out.data(), out.size()) =
        detail::CArrMap<S>(a.ptr(), out.size()) * detail::CArrMap<S>(b.ptr(), out.size());
    detail::check_finite(out, "mul");
    return record(Op::kMul, {a, b}, TensorT<S>(a.shape, share(std::move(out))));
  }

  TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b, bool transpose_b = false) {
    if (a.rank() != 2 || b.rank() != 2)
      throw ShapeError("matmul: expects rank-2 inputs, got " + shape_str(a.shape) + " and " + shape_str(b.shape));
    const std::int64_t m = a.shape[0], k = a.shape[1];
    const std::int64_t bk = transpose_b ? b.shape[1] : b.shape[0];
    const std::int64_t n = transpose_b ? b.shape[0] : b.shape[1];
    if (k != bk) throw ShapeError("matmul: inner extents " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    std::vector<S> out(static_cast<std::size_t>(m * n));
    detail::MapCM<S> ma(a.ptr(), m, k);
    detail::MapM<S> mo(out.data(), m, n);
    if (transpose_b) {
      detail::MapCM<S> mb(b.ptr(), n, k);
      mo.noalias() = ma * mb.transpose();
    } else {
      detail::MapCM<S> mb(b.ptr(), k, n);
      mo.noalias() = ma * mb;
    }
    detail::check_finite(out, "matmul");
    Node extra;
    extra.flag = transpose_b;
    return record(Op::kMatmul, {a, b}, TensorT<S>({m, n}, share(std::move(out))), std::move(extra));
  }

  // Zero-padded square-kernel convolution, NCHW input, OCkk kernel, no bias.
  TensorT<S> conv2d(const TensorT<S>& x, const TensorT<S>& k, int stride, int pad) {
    if (x.rank() != 4 || k.rank() != 4)
      throw ShapeError("conv2d: expects NCHW input and OCkk kernel");
    if (k.shape[2] != k.shape[3]) throw ShapeError("conv2d: kernel must be square");
    if (x.shape[1] != k.shape[1])
      throw ShapeError("conv2d: channel mismatch " + shape_str(x.shape) + " vs " + shape_str(k.shape));
    if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
    if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
    const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    const std::int64_t o = k.shape[0], ks = k.shape[2];
    if (h + 2 * pad < ks || w + 2 * pad < ks) throw ShapeError("conv2d: kernel larger than padded input");
    const std::int64_t ho = (h + 2 * pad - ks) / stride + 1;
    const std::int64_t wo = (w + 2 * pad - ks) / stride + 1;
    const std::int64_t howo = ho * wo, kk = c * ks * ks;
    const std::int64_t chunk = conv_chunk(kk, howo);
    std::vector<S> out(static_cast<std::size_t>(n * o * howo));
    std::vector<S> col(static_cast<std::size_t>(kk * chunk * howo));
    std::vector<S> obuf(static_cast<std::size_t>(o * chunk * howo));
    detail::MapCM<S> kmat(k.ptr(), o, kk);
    detail::MapCM<S> mcol(col.data(), kk, chunk * howo);
    detail::MapM<S> mo(obuf.data(), o, chunk * howo);
    for (std::int64_t i0 = 0; i0 < n; i0 += chunk) {
      const std::int64_t b = std::min(chunk, n - i0);
      if (b < chunk) std::fill(col.begin(), col.end(), S(0));
      for (std::int64_t img = 0; img < b; ++img)
        im2col(x.ptr() + (i0 + img) * c * h * w, c, h, w, static_cast<int>(ks), stride, pad, ho, wo,
               col.data() + img * howo, chunk * howo);
      mo.noalias() = kmat * mcol;
      for (std::int64_t img = 0; img < b; ++img)
        for (std::int64_t oc = 0; oc < o; ++oc)
          std::memcpy(out.data() + ((i0 + img) * o + oc) * howo,
                      obuf.data() + (oc * chunk + img) * howo, static_cast<std::size_t>(howo) * sizeof(S));
    }
    detail::check_finite(out, "conv2d");
    Node extra;
    extra.i0 = stride;
    extra.i1 = pad;
    return record(Op::kConv2d, {x, k}, TensorT<S>({n, o, ho, wo}, share(std::move(out))), std::move(extra));
  }

  // 2x2 max pooling with stride 2. Ties route to the first maximal element
  // in row-major window order, which keeps backward deterministic.
  TensorT<S> max_pool2(const TensorT<S>& x) {
    if (x.rank() != 4) throw ShapeError("max_pool2: expects NCHW input");
    const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
    if (h % 2 != 0 || w % 2 != 0) throw ShapeError("max_pool2: spatial extents must be even, got " + shape_str(x.shape));
    const std::int64_t ho = h / 2, wo = w / 2;
    std::vector<S> out(static_cast<std::size_t>(n * c * ho * wo));
    std::vector<std::int32_t> arg(out.size());
    const S* in = x.ptr();
    std::size_t oi = 0;
    for (std::int64_t p = 0; p < n * c; ++p) {
      const S* plane = in + p * h * w;
      for (std::int64_t y = 0; y < ho; ++y)
        for (std::int64_t z = 0; z < wo; ++z, ++oi) {
          const std::int64_t base = (2 * y) * w + 2 * z;
          const std::int64_t cand[4] = {base, base + 1, base + w, base + w + 1};
          std::int64_t best = cand[0];
          for (int t = 1; t < 4; ++t)
            if (plane[cand[t]] > plane[best]) best = cand[t];
          out[oi] = plane[best];
          arg[oi] = static_cast<std::int32_t>(best);
        }
    }
    detail::check_finite(out, "max_pool2");
    Node extra;
    extra.saved_idx = std::move(arg);
    return record(Op::kMaxPool2, {x}, TensorT<S>({n, c, ho, wo}, share(std::move(out))), std::move(extra));
  }

  TensorT<S> avg_pool_global(const TensorT<S>& x) {
    if (x.rank() != 4) throw ShapeError("avg_pool_global: expects NCHW input");
    const std::int64_t n = x.shape[0], c = x.shape[1], hw = x.shape[2] * x.shape[3];
    if (hw == 0) throw ShapeError("avg_pool_global: empty spatial extent");
    std::vector<S> out(static_cast<std::size_t>(n * c));
    const S* in = x.ptr();
    for (std::int64_t p = 0; p < n * c; ++p)
      out[static_cast<std::size_t>(p)] = detail::sum(in + p * hw, hw) / static_cast<S>(hw);
    detail::check_finite(out, "avg_pool_global");
    return record(Op::kAvgPoolGlobal, {x}, TensorT<S>({n, c}, share(std::move(out))));
  }

  TensorT<S> relu(const TensorT<S>& x) {
    std::vector<S> out(x.vals().size());
    detail::ArrMap<S>(out.data(), out.size()) = detail::CArrMap<S>(x.ptr(), out.size()).max(S(0));
    return record(Op::kRelu, {x}, TensorT<S>(x.shape, share(std::move(out))));
  }

  // Per-channel batch normalization over [N,C] or [N,C,H,W]. Training mode
  // normalizes with biased batch statistics and folds them into the running
  // buffers with decay 0.9; eval mode is an affine map under the running
  // statistics. Buffers are plain state, never differentiated.
  TensorT<S> batch_norm(const TensorT<S>& x, const TensorT<S>& gamma, const TensorT<S>& beta,
                        std::vector<S>& run_mean, std::vector<S>& run_var, bool training) {
    if (x.rank() != 2 && x.rank() != 4) throw ShapeError("batch_norm: expects [N,C] or [N,C,H,W]");
    const std::int64_t n = x.shape[0], c = x.shape[1];
    const std::int64_t hw = x.rank() == 4 ? x.shape[2] * x.shape[3] : 1;
    if (gamma.shape != Shape{c} || beta.shape != Shape{c})
      throw ShapeError("batch_norm: gamma/beta must have shape [C]");
    if (static_cast<std::int64_t>(run_mean.size()) != c || static_cast<std::int64_t>(run_var.size()) != c)
      throw ShapeError("batch_norm: running buffers must have length C");
    if (training && n * hw < 2) throw ShapeError("batch_norm: training mode needs at least 2 values per channel");

    const S eps = static_cast<S>(1e-5);
    std::vector<S> mean(static_cast<std::size_t>(c)), var(static_cast<std::size_t>(c));
    if (training) {
      const S m = static_cast<S>(n * hw);
      // Image-major passes walk the buffer sequentially; per-channel partial
      // sums still accumulate in ascending image order.
      std::fill(mean.begin(), mean.end(), S(0));
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch)
          mean[static_cast<std::size_t>(ch)] += detail::sum(x.ptr() + (i * c + ch) * hw, hw);
      for (auto& v : mean) v /= m;
      std::fill(var.begin(), var.end(), S(0));
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t ch = 0; ch < c; ++ch)
          var[static_cast<std::size_t>(ch)] +=
              detail::sq_dev_sum(x.ptr() + (i * c + ch) * hw, hw, mean[static_cast<std::size_t>(ch)]);
      for (auto& v : var) v /= m;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        run_mean[static_cast<std::size_t>(ch)] = S(0.9) * run_mean[static_cast<std::size_t>(ch)] + S(0.1) * mean[static_cast<std::size_t>(ch)];
        run_var[static_cast<std::size_t>(ch)] = S(0.9) * run_var[static_cast<std::size_t>(ch)] + S(0.1) * var[static_cast<std::size_t>(ch)];
      }
    } else {
      mean = run_mean;
      var = run_var;
    }

    std::vector<S> invstd(static_cast<std::size_t>(c));
    for (std::int64_t ch = 0; ch < c; ++ch)
      invstd[static_cast<std::size_t>(ch)] = S(1) / std::sqrt(var[static_cast<std::size_t>(ch)] + eps);

    std::vector<S> xhat(x.vals().size());
    std::vector<S> out(x.vals().size());
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const std::int64_t base = (i * c + ch) * hw;
        const S mu = mean[static_cast<std::size_t>(ch)], is = invstd[static_cast<std::size_t>(ch)];
        const S g = gamma.vals()[static_cast<std::size_t>(ch)], b = beta.vals()[static_cast<std::size_t>(ch)];
        const S* xp = x.ptr() + base;
        S* xh = xhat.data() + base;
        S* op = out.data() + base;
        for (std::int64_t j = 0; j < hw; ++j) {
          xh[j] = (xp[j] - mu) * is;
          op[j] = g * xh[j] + b;
        }
      }
    detail::check_finite(out, "batch_norm");
    Node extra;
    extra.flag = training;
    extra.saved = std::move(xhat);
    extra.saved2 = std::move(invstd);
    return record(Op::kBatchNorm, {x, gamma, beta}, TensorT<S>(x.shape, share(std::move(out))), std::move(extra));
  }

  TensorT<S> l2_normalize_rows(const TensorT<S>& x) {
    if (x.rank() != 2) throw ShapeError("l2_normalize_rows: expects [N,d]");
    const std::int64_t n = x.shape[0], d = x.shape[1];
    std::vector<S> out(x.vals().size());
    std::vector<S> norms(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      S acc = 0;
      for (std::int64_t j = 0; j < d; ++j) {
        const S v = x.ptr()[i * d + j];
        acc += v * v;
      }
      const S nrm = std::max(std::sqrt(acc), static_cast<S>(1e-12));
      norms[static_cast<std::size_t>(i)] = nrm;
      for (std::int64_t j = 0; j < d; ++j) out[static_cast<std::size_t>(i * d + j)] = x.ptr()[i * d + j] / nrm;
    }
    detail::check_finite(out, "l2_normalize_rows");
    Node extra;
    extra.saved = std::move(norms);
    return record(Op::kL2NormalizeRows, {x}, TensorT<S>(x.shape, share(std::move(out))), std::move(extra));
  }

  TensorT<S> log_softmax_rows(const TensorT<S>& x) {
    if (x.rank() != 2) throw ShapeError("log_softmax_rows: expects [N,K]");
    const std::int64_t n = x.shape[0], k = x.shape[1];
    if (k == 0) throw ShapeError("log_softmax_rows: empty rows");
    std::vector<S> out(x.vals().size());
    for (std::int64_t i = 0; i < n; ++i) {
      const S* row = x.ptr() + i * k;
      S mx = row[0];
      for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
      S sum = 0;
      for (std::int64_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
      const S lse = mx + std::log(sum);
      for (std::int64_t j = 0; j < k; ++j) out[static_cast<std::size_t>(i * k + j)] = row[j] - lse;
    }
    detail::check_finite(out, "log_softmax_rows");
    return record(Op::kLogSoftmaxRows, {x}, TensorT<S>(x.shape, share(std::move(out))));
  }

  TensorT<S> mean_all(const TensorT<S>& x) {
    const std::int64_t n = x.numel();
    if (n == 0) throw ShapeError("mean_all: empty tensor");
    // Strictly sequential on purpose: interleaved exact zeros (one-hot masks)
    // must not change the value, so losses built from masked products stay
    // bitwise equal to their dense counterparts.
    S acc = 0;
    for (S v : x.vals()) acc += v;
    std::vector<S> out{acc / static_cast<S>(n)};
    detail::check_finite(out, "mean_all");
    return record(Op::kMeanAll, {x}, TensorT<S>({}, share(std::move(out))));
  }

  TensorT<S> reshape(const TensorT<S>& x, Shape shape) {
    if (numel_of(shape) != x.numel())
      throw ShapeError("reshape: " + shape_str(x.shape) + " to " + shape_str(shape));
    return record(Op::kReshape, {x}, TensorT<S>(std::move(shape), x.data));
  }

  TensorT<S> concat_rows(const std::vector<TensorT<S>>& xs) {
    if (xs.empty()) throw ShapeError("concat_rows: no inputs");
    const Shape& first = xs[0].shape;
    if (first.empty()) throw ShapeError("concat_rows: inputs must have rank >= 1");
    std::int64_t rows = 0;
    for (const auto& x : xs) {
      if (x.rank() != xs[0].rank() ||
          !std::equal(x.shape.begin() + 1, x.shape.end(), first.begin() + 1))
        throw ShapeError("concat_rows: trailing extents differ");
      rows += x.shape[0];
    }
    Shape out_shape = first;
    out_shape[0] = rows;
    std::vector<S> out;
    out.reserve(static_cast<std::size_t>(numel_of(out_shape)));
    for (const auto& x : xs) out.insert(out.end(), x.vals().begin(), x.vals().end());
    return record(Op::kConcatRows, xs, TensorT<S>(std::move(out_shape), share(std::move(out))));
  }

  // ---- reverse pass ------------------------------------------------------

  GradMapT<S> backward(const TensorT<S>& loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape));
    if (backward_done_) throw StateError("backward: tape already consumed; reset() first");
    if (loss.tape_id != id_ || loss.node == kNoNode)
      throw ContractError("backward: loss is not recorded on this tape");
    backward_done_ = true;

    std::vector<std::vector<S>> grads(nodes_.size());
    grads[static_cast<std::size_t>(loss.node)] = {S(1)};

    for (std::int64_t ni = static_cast<std::int64_t>(nodes_.size()) - 1; ni >= 0; --ni) {
      Node& nd = nodes_[static_cast<std::size_t>(ni)];
      if (grads[static_cast<std::size_t>(ni)].empty() || nd.op == Op::kLeaf) continue;
      propagate(nd, grads[static_cast<std::size_t>(ni)], grads);
    }

    GradMapT<S> result(id_);
    for (std::size_t ni = 0; ni < nodes_.size(); ++ni) {
      const Node& nd = nodes_[ni];
      if (nd.op != Op::kLeaf || !nd.needs_grad) continue;
      auto& g = grads[ni];
      if (g.empty()) g.assign(static_cast<std::size_t>(nd.out.numel()), S(0));
      detail::check_finite(g, "backward");
      result.put(static_cast<std::int64_t>(ni), TensorT<S>(nd.out.shape, share(std::move(g))));
    }
    return result;
  }

 private:
  enum class Op {
    kLeaf, kAdd, kMul, kMatmul, kConv2d, kMaxPool2, kAvgPoolGlobal, kRelu,
    kBatchNorm, kL2NormalizeRows, kLogSoftmaxRows, kMeanAll, kReshape, kConcatRows
  };

  struct Node {
    Op op = Op::kLeaf;
    std::vector<TensorT<S>> in;
    TensorT<S> out;
    int i0 = 0, i1 = 0;               // conv stride / pad
    bool flag = false;                // matmul transpose_b, batch_norm training
    std::vector<S> saved;             // op scratch (xhat, row norms)
    std::vector<S> saved2;            // op scratch (invstd)
    std::vector<std::int32_t> saved_idx;  // max-pool argmax
    bool needs_grad = false;
  };

  static std::shared_ptr<const std::vector<S>> share(std::vector<S>&& v) {
    return std::make_shared<const std::vector<S>>(std::move(v));
  }

  bool tracked(const TensorT<S>& t) const { return t.tape_id == id_ && t.node != kNoNode; }

  std::int64_t push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<std::int64_t>(nodes_.size()) - 1;
  }

  TensorT<S> record(Op op, std::vector<TensorT<S>> in, TensorT<S> out, Node extra = Node{}) {
    bool any = false;
    for (const auto& t : in)
      if (tracked(t) && nodes_[static_cast<std::size_t>(t.node)].needs_grad) any = true;
    if (!any) return out;
    if (backward_done_) throw StateError("tape already consumed; reset() before recording more work");
    extra.op = op;
    extra.in = std::move(in);
    extra.needs_grad = true;
    out.node = push(std::move(extra));
    out.tape_id = id_;
    out.requires_grad = true;
    nodes_.back().out = out;
    return out;
  }

  // Takes ownership of `g`: an empty slot steals the buffer outright, so the
  // common single-consumer path never copies a gradient.
  void accum(std::vector<std::vector<S>>& grads, const TensorT<S>& in, std::vector<S>&& g) {
    if (!tracked(in) || !nodes_[static_cast<std::size_t>(in.node)].needs_grad) return;
    auto& slot = grads[static_cast<std::size_t>(in.node)];
    if (slot.empty()) {
      slot = std::move(g);
    } else {
      detail::ArrMap<S>(slot.data(), slot.size()) += detail::CArrMap<S>(g.data(), g.size());
    }
  }

  // Images per im2col/GEMM chunk: wide-N products amortize kernel packing
  // (the per-image N is small next to the panel sizes), capped so the column
  // buffer stays a few MB. The width depends only on the layer shape — never
  // on the batch size — and short chunks are zero-padded to the full width,
  // so a given image's columns see the same GEMM blocking (and therefore the
  // same rounding) no matter what else is in the batch. Eigen picks its
  // blocking from the product dimensions, so equal inputs in a different-N
  // product can round differently.
  static std::int64_t conv_chunk(std::int64_t kk, std::int64_t howo) {
    const std::int64_t cap = (std::int64_t{1} << 21) / std::max<std::int64_t>(1, kk * howo);
    return std::clamp<std::int64_t>(cap, 1, 8);
  }

  // Writes one image's patch matrix: row r of the [c*ks*ks, row_stride] chunk
  // holds this image's ho*wo patch values starting at col0 + r*row_stride.
  static void im2col(const S* in, std::int64_t c, std::int64_t h, std::int64_t w, int ks, int stride,
                     int pad, std::int64_t ho, std::int64_t wo, S* col0, std::int64_t row_stride) {
    if (stride == 1 && ho == h && wo == w) {
      // Same-size case: patch row r is the whole plane shifted by a constant.
      // One flat copy, then zero the columns that wrapped across row ends.
      const std::int64_t hw = h * w;
      std::int64_t r = 0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const S* plane = in + ch * hw;
        for (int ky = 0; ky < ks; ++ky)
          for (int kx = 0; kx < ks; ++kx, ++r) {
            S* dst = col0 + r * row_stride;
            const std::int64_t dx = kx - pad;
            const std::int64_t s = (ky - pad) * w + dx;
            const std::int64_t lo = std::min<std::int64_t>(std::max<std::int64_t>(0, -s), hw);
            const std::int64_t hi = std::max(lo, std::min(hw, hw - s));
            std::fill(dst, dst + lo, S(0));
            std::memcpy(dst + lo, plane + lo + s, static_cast<std::size_t>(hi - lo) * sizeof(S));
            std::fill(dst + hi, dst + hw, S(0));
            for (std::int64_t x = 0; x < std::min<std::int64_t>(-dx, w); ++x)
              for (std::int64_t y = 0; y < h; ++y) dst[y * w + x] = S(0);
            for (std::int64_t x = std::max<std::int64_t>(0, w - dx); x < w; ++x)
              for (std::int64_t y = 0; y < h; ++y) dst[y * w + x] = S(0);
          }
      }
      return;
    }
    std::int64_t r = 0;
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (int ky = 0; ky < ks; ++ky)
        for (int kx = 0; kx < ks; ++kx, ++r) {
          S* dst = col0 + r * row_stride;
          for (std::int64_t y = 0; y < ho; ++y, dst += wo) {
            const std::int64_t iy = y * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, S(0));
              continue;
            }
            const S* row = in + (ch * h + iy) * w;
            if (stride == 1) {  // contiguous span, pad-clipped at both ends
              const std::int64_t shift = kx - pad;
              const std::int64_t lo = std::max<std::int64_t>(0, -shift);
              const std::int64_t hi = std::max(lo, std::min(wo, w - shift));
              std::fill(dst, dst + lo, S(0));
              std::memcpy(dst + lo, row + lo + shift, static_cast<std::size_t>(hi - lo) * sizeof(S));
              std::fill(dst + hi, dst + wo, S(0));
            } else {
              for (std::int64_t x = 0; x < wo; ++x) {
                const std::int64_t ix = x * stride - pad + kx;
                dst[x] = (ix < 0 || ix >= w) ? S(0) : row[ix];
              }
            }
          }
        }
  }

  static void col2im_add(const S* col0, std::int64_t row_stride, std::int64_t c, std::int64_t h,
                         std::int64_t w, int ks, int stride, int pad, std::int64_t ho,
                         std::int64_t wo, S* out) {
    std::int64_t r = 0;
    for (std::int64_t ch = 0; ch < c; ++ch)
      for (int ky = 0; ky < ks; ++ky)
        for (int kx = 0; kx < ks; ++kx, ++r) {
          const S* src = col0 + r * row_stride;
          for (std::int64_t y = 0; y < ho; ++y, src += wo) {
            const std::int64_t iy = y * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            S* row = out + (ch * h + iy) * w;
            if (stride == 1) {
              const std::int64_t shift = kx - pad;
              const std::int64_t lo = std::max<std::int64_t>(0, -shift);
              const std::int64_t hi = std::max(lo, std::min(wo, w - shift));
              if (hi > lo)
                detail::ArrMap<S>(row + lo + shift, hi - lo) += detail::CArrMap<S>(src + lo, hi - lo);
            } else {
              for (std::int64_t x = 0; x < wo; ++x) {
                const std::int64_t ix = x * stride - pad + kx;
                if (ix >= 0 && ix < w) row[ix] += src[x];
              }
            }
          }
        }
  }

  void propagate(Node& nd, std::vector<S>& g, std::vector<std::vector<S>>& grads) {
    switch (nd.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        const auto& a = nd.in[0];
        const auto& b = nd.in[1];
        if (b.shape == a.shape) {
          accum(grads, a, std::vector<S>(g));
          accum(grads, b, std::move(g));
        } else {  // bias over rows: reduce columns
          const std::int64_t n = a.shape[0], d = a.shape[1];
          std::vector<S> gb(static_cast<std::size_t>(d), S(0));
          detail::ArrMap<S> vgb(gb.data(), d);
          for (std::int64_t i = 0; i < n; ++i) vgb += detail::CArrMap<S>(g.data() + i * d, d);
          accum(grads, a, std::move(g));
          accum(grads, b, std::move(gb));
        }
        break;
      }
      case Op::kMul: {
        const auto& a = nd.in[0];
        const auto& b = nd.in[1];
        const std::size_t sz = g.size();
        std::vector<S> ga(sz), gb(sz);
        detail::ArrMap<S>(ga.data(), sz) = detail::CArrMap<S>(g.data(), sz) * detail::CArrMap<S>(b.ptr(), sz);
        detail::ArrMap<S>(gb.data(), sz) = detail::CArrMap<S>(g.data(), sz) * detail::CArrMap<S>(a.ptr(), sz);
        accum(grads, a, std::move(ga));
        accum(grads, b, std::move(gb));
        break;
      }
      case Op::kMatmul: {
        const auto& a = nd.in[0];
        const auto& b = nd.in[1];
        const std::int64_t m = a.shape[0], k = a.shape[1], n = nd.out.shape[1];
        detail::MapCM<S> mg(g.data(), m, n);
        detail::MapCM<S> ma(a.ptr(), m, k);
        std::vector<S> ga(static_cast<std::size_t>(m * k)), gb(b.vals().size());
        detail::MapM<S> mga(ga.data(), m, k);
        if (nd.flag) {  // out = a * b^T, b is [n,k]
          detail::MapCM<S> mb(b.ptr(), n, k);
          mga.noalias() = mg * mb;
          detail::MapM<S> mgb(gb.data(), n, k);
          mgb.noalias() = mg.transpose() * ma;
        } else {  // out = a * b, b is [k,n]
          detail::MapCM<S> mb(b.ptr(), k, n);
          mga.noalias() = mg * mb.transpose();
          detail::MapM<S> mgb(gb.data(), k, n);
          mgb.noalias() = ma.transpose() * mg;
        }
        accum(grads, a, std::move(ga));
        accum(grads, b, std::move(gb));
        break;
      }
      case Op::kConv2d: {
        const auto& x = nd.in[0];
        const auto& k = nd.in[1];
        const int stride = nd.i0, pad = nd.i1;
        const std::int64_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
        const std::int64_t o = k.shape[0], ks = k.shape[2];
        const std::int64_t ho = nd.out.shape[2], wo = nd.out.shape[3];
        const std::int64_t howo = ho * wo, kk = c * ks * ks;
        const std::int64_t chunk = conv_chunk(kk, howo);
        std::vector<S> gx(x.vals().size(), S(0)), gk(k.vals().size(), S(0));
        std::vector<S> col(static_cast<std::size_t>(kk * chunk * howo));
        std::vector<S> gcol(col.size());
        std::vector<S> gbuf(static_cast<std::size_t>(o * chunk * howo));
        detail::MapCM<S> kmat(k.ptr(), o, kk);
        detail::MapM<S> mgk(gk.data(), o, kk);
        detail::MapCM<S> mcol(col.data(), kk, chunk * howo);
        detail::MapCM<S> mg(gbuf.data(), o, chunk * howo);
        detail::MapM<S> mgcol(gcol.data(), kk, chunk * howo);
        for (std::int64_t i0 = 0; i0 < n; i0 += chunk) {
          const std::int64_t b = std::min(chunk, n - i0);
          if (b < chunk) {  // zero both pads: the weight GEMM reads every column
            std::fill(col.begin(), col.end(), S(0));
            std::fill(gbuf.begin(), gbuf.end(), S(0));
          }
          for (std::int64_t img = 0; img < b; ++img) {
            im2col(x.ptr() + (i0 + img) * c * h * w, c, h, w, static_cast<int>(ks), stride, pad, ho, wo,
                   col.data() + img * howo, chunk * howo);
            for (std::int64_t oc = 0; oc < o; ++oc)
              std::memcpy(gbuf.data() + (oc * chunk + img) * howo,
                          g.data() + ((i0 + img) * o + oc) * howo, static_cast<std::size_t>(howo) * sizeof(S));
          }
          mgk.noalias() += mg * mcol.transpose();
          mgcol.noalias() = kmat.transpose() * mg;
          for (std::int64_t img = 0; img < b; ++img)
            col2im_add(gcol.data() + img * howo, chunk * howo, c, h, w, static_cast<int>(ks), stride, pad, ho, wo,
                       gx.data() + (i0 + img) * c * h * w);
        }
        accum(grads, x, std::move(gx));
        accum(grads, k, std::move(gk));
        break;
      }
      case Op::kMaxPool2: {
        const auto& x = nd.in[0];
        const std::int64_t h = x.shape[2], w = x.shape[3];
        const std::int64_t planes = x.shape[0] * x.shape[1];
        const std::int64_t howo = nd.out.shape[2] * nd.out.shape[3];
        std::vector<S> gx(x.vals().size(), S(0));
        for (std::int64_t p = 0; p < planes; ++p)
          for (std::int64_t i = 0; i < howo; ++i)
            gx[static_cast<std::size_t>(p * h * w + nd.saved_idx[static_cast<std::size_t>(p * howo + i)])] +=
                g[static_cast<std::size_t>(p * howo + i)];
        accum(grads, x, std::move(gx));
        break;
      }
      case Op::kAvgPoolGlobal: {
        const auto& x = nd.in[0];
        const std::int64_t hw = x.shape[2] * x.shape[3];
        std::vector<S> gx(x.vals().size());
        for (std::int64_t p = 0; p < x.shape[0] * x.shape[1]; ++p)
          detail::ArrMap<S>(gx.data() + p * hw, hw)
              .setConstant(g[static_cast<std::size_t>(p)] / static_cast<S>(hw));
        accum(grads, x, std::move(gx));
        break;
      }
      case Op::kRelu: {
        const auto& x = nd.in[0];
        const std::size_t sz = g.size();
        std::vector<S> gx(sz);
        detail::ArrMap<S>(gx.data(), sz) =
            (detail::CArrMap<S>(x.ptr(), sz) > S(0))
                .select(detail::CArrMap<S>(g.data(), sz), S(0));
        accum(grads, x, std::move(gx));
        break;
      }
      case Op::kBatchNorm: {
        const auto& x = nd.in[0];
        const auto& gamma = nd.in[1];
        const auto& beta = nd.in[2];
        const std::int64_t n = x.shape[0], c = x.shape[1];
        const std::int64_t hw = x.rank() == 4 ? x.shape[2] * x.shape[3] : 1;
        const std::vector<S>& xhat = nd.saved;
        const std::vector<S>& invstd = nd.saved2;
        std::vector<S> dgamma(static_cast<std::size_t>(c), S(0)), dbeta(static_cast<std::size_t>(c), S(0));
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t base = (i * c + ch) * hw;
            dgamma[static_cast<std::size_t>(ch)] += detail::dot(g.data() + base, xhat.data() + base, hw);
            dbeta[static_cast<std::size_t>(ch)] += detail::sum(g.data() + base, hw);
          }
        std::vector<S> gx(x.vals().size());
        if (nd.flag) {  // training: statistics depend on x
          const S m = static_cast<S>(n * hw);
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const S ga = gamma.vals()[static_cast<std::size_t>(ch)];
              const S is = invstd[static_cast<std::size_t>(ch)];
              const S sum_dy = dbeta[static_cast<std::size_t>(ch)];
              const S sum_dy_xhat = dgamma[static_cast<std::size_t>(ch)];
              const std::int64_t base = (i * c + ch) * hw;
              const S* gp = g.data() + base;
              const S* xh = xhat.data() + base;
              S* op = gx.data() + base;
              for (std::int64_t j = 0; j < hw; ++j)
                op[j] = ga * is / m * (m * gp[j] - sum_dy - xh[j] * sum_dy_xhat);
            }
        } else {  // eval: affine in x
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const std::int64_t base = (i * c + ch) * hw;
              const S scale = gamma.vals()[static_cast<std::size_t>(ch)] * invstd[static_cast<std::size_t>(ch)];
              detail::ArrMap<S>(gx.data() + base, hw) = detail::CArrMap<S>(g.data() + base, hw) * scale;
            }
        }
        accum(grads, x, std::move(gx));
        accum(grads, gamma, std::move(dgamma));
        accum(grads, beta, std::move(dbeta));
        break;
      }
      case Op::kL2NormalizeRows: {
        const auto& x = nd.in[0];
        const std::int64_t n = x.shape[0], d = x.shape[1];
        std::vector<S> gx(g.size());
        for (std::int64_t i = 0; i < n; ++i) {
          const S nrm = nd.saved[static_cast<std::size_t>(i)];
          const S* y = nd.out.ptr() + i * d;
          const S* gr = g.data() + i * d;
          S dot = 0;
          for (std::int64_t j = 0; j < d; ++j) dot += y[j] * gr[j];
          for (std::int64_t j = 0; j < d; ++j) gx[static_cast<std::size_t>(i * d + j)] = (gr[j] - y[j] * dot) / nrm;
        }
        accum(grads, x, std::move(gx));
        break;
      }
      case Op::kLogSoftmaxRows: {
        const auto& x = nd.in[0];
        const std::int64_t n = x.shape[0], k = x.shape[1];
        std::vector<S> gx(g.size());
        for (std::int64_t i = 0; i < n; ++i) {
          const S* y = nd.out.ptr() + i * k;
          const S* gr = g.data() + i * k;
          S gsum = 0;
          for (std::int64_t j = 0; j < k; ++j) gsum += gr[j];
          for (std::int64_t j = 0; j < k; ++j)
            gx[static_cast<std::size_t>(i * k + j)] = gr[j] - std::exp(y[j]) * gsum;
        }
        accum(grads, x, std::move(gx));
        break;
      }
      case Op::kMeanAll: {
        const auto& x = nd.in[0];
        const S scale = g[0] / static_cast<S>(x.numel());
        std::vector<S> gx(x.vals().size(), scale);
        accum(grads, x, std::move(gx));
        break;
      }
      case Op::kReshape: {
        accum(grads, nd.in[0], std::move(g));
        break;
      }
      case Op::kConcatRows: {
        std::size_t off = 0;
        for (const auto& x : nd.in) {
          const std::size_t cnt = x.vals().size();
          std::vector<S> gx(g.begin() + off, g.begin() + off + cnt);
          accum(grads, x, std::move(gx));
          off += cnt;
        }
        break;
      }
    }
  }

  std::uint64_t id_;
  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

using Tensor = TensorT<float>;
using Tape = TapeT<float>;
using GradMap = GradMapT<float>;

}  // namespace simcl
