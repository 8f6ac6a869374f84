#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "simcl/errors.hpp"
#include "simcl/tensor.hpp"

namespace simcl {

// SGD hyperparameters. Defaults are the reference training recipe
// (100 epochs, lr 0.01, momentum 0.9, weight decay 1e-4).
struct SgdHyper {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0001;
  int epochs = 100;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
    if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
    if (weight_decay < 0) throw ConfigError("weight_decay must be non-negative");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
  }
};

// One velocity buffer per parameter, in parameter order.
template <typename S>
struct SgdStateT {
  std::vector<std::vector<S>> velocity;

  static SgdStateT zeros_like(const std::vector<TensorT<S>*>& params) {
    SgdStateT st;
    st.velocity.reserve(params.size());
    for (const auto* p : params) st.velocity.emplace_back(static_cast<std::size_t>(p->numel()), S(0));
    return st;
  }
};

using SgdState = SgdStateT<float>;

// p <- p - lr * v,  v <- momentum * v + (g + weight_decay * p).
// Parameters are replaced with fresh buffers; old values remain valid for
// any checkpoint copies still holding them.
template <typename S>
void sgd_step(const std::vector<TensorT<S>*>& params, const GradMapT<S>& grads, SgdStateT<S>& state,
              const SgdHyper& hyper) {
  hyper.validate();
  if (state.velocity.size() != params.size())
    throw ShapeError("sgd_step: " + std::to_string(state.velocity.size()) + " velocity buffers for " +
                     std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    TensorT<S>& p = *params[i];
    const TensorT<S>& g = grads.at(p);
    if (g.shape != p.shape)
      throw ShapeError("sgd_step: gradient shape " + shape_str(g.shape) + " vs parameter " + shape_str(p.shape));
    auto& v = state.velocity[i];
    if (v.size() != p.vals().size()) throw ShapeError("sgd_step: velocity buffer size mismatch");
    auto next = std::make_shared<std::vector<S>>(p.vals());
    const S lr = static_cast<S>(hyper.learning_rate);
    const S mom = static_cast<S>(hyper.momentum);
    const S wd = static_cast<S>(hyper.weight_decay);
    for (std::size_t j = 0; j < v.size(); ++j) {
      const S adj = g.vals()[j] + wd * (*next)[j];
      v[j] = mom * v[j] + adj;
      (*next)[j] -= lr * v[j];
    }
    p.data = std::move(next);
    p.node = kNoNode;
    p.tape_id = 0;
  }
}

// Builds a scalar loss from parameter tensors. Must be a pure function of
// the parameter values (fresh batch-norm buffers per call, fixed inputs).
template <typename S>
using GraphBuilder = std::function<TensorT<S>(TapeT<S>&, std::vector<TensorT<S>>&)>;

// Central-difference check of the reverse pass:
// max over parameter elements of |analytic - central| / max(|analytic|, |central|, 1e-8).
template <typename S>
double finite_diff_check(std::vector<TensorT<S>> params, const GraphBuilder<S>& builder, double eps) {
  TapeT<S> tape;
  for (auto& p : params) tape.watch(p);
  TensorT<S> loss = builder(tape, params);
  GradMapT<S> grads = tape.backward(loss);

  const auto eval_at = [&](const std::vector<TensorT<S>>& pts) {
    TapeT<S> t;  // nothing watched: pure forward
    std::vector<TensorT<S>> local = pts;
    return static_cast<double>(builder(t, local).scalar());
  };

  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const TensorT<S>& g = grads.at(params[pi]);
    for (std::size_t j = 0; j < params[pi].vals().size(); ++j) {
      std::vector<TensorT<S>> plus = params, minus = params;
      auto bump = [&](std::vector<TensorT<S>>& set, double delta) {
        auto v = std::make_shared<std::vector<S>>(set[pi].vals());
        (*v)[j] += static_cast<S>(delta);
        set[pi].data = std::move(v);
        set[pi].node = kNoNode;
        set[pi].tape_id = 0;
      };
      bump(plus, eps);
      bump(minus, -eps);
      const double central = (eval_at(plus) - eval_at(minus)) / (2.0 * eps);
      const double analytic = static_cast<double>(g.vals()[j]);
      const double err = std::abs(analytic - central) / std::max({std::abs(analytic), std::abs(central), 1e-8});
      worst = std::max(worst, err);
    }
  }
  return worst;
}

}  // namespace simcl
