#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "resq/autodiff.hpp"

namespace resq {

/// AdamW moment buffers, one slot per parameter, in parameter-list order.
template <typename T>
struct AdamWState {
  T beta1 = T(0.9);
  T beta2 = T(0.95);
  T eps = T(1e-8);
  int64_t step = 0;

  struct Slot {
    std::vector<T> m, v;
  };
  std::vector<Slot> slots;

  void bind(std::span<Parameter<T>* const> params) {
    slots.resize(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
      slots[i].m.assign(params[i]->tensor.numel(), T(0));
      slots[i].v.assign(params[i]->tensor.numel(), T(0));
    }
  }
};

template <typename T>
struct AdamWResult {
  T grad_norm = T(0);  // pre-clip global norm
  bool diverged = false;
};

/// Global gradient-norm clipping followed by the bias-corrected AdamW update.
/// Decoupled weight decay theta <- theta * (1 - lr*lambda) applies only to
/// parameters flagged `decay`. Non-finite gradients raise the divergence flag
/// and leave parameters and state untouched.
template <typename T>
inline AdamWResult<T> adamw_step(std::span<Parameter<T>* const> params, AdamWState<T>& state,
                                 T lr, T weight_decay, T clip) {
  if (state.slots.size() != params.size()) {
    throw std::invalid_argument("adamw_step: state not bound to this parameter list");
  }
  AdamWResult<T> res;
  double norm_sq = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i]->tensor.grad;
    if (g.size() != params[i]->tensor.numel()) {
      throw std::invalid_argument("adamw_step: parameter '" + params[i]->name + "' has no gradient");
    }
    for (T x : g) {
      if (!std::isfinite(x)) {
        res.diverged = true;
        return res;
      }
      norm_sq += static_cast<double>(x) * static_cast<double>(x);
    }
  }
  res.grad_norm = static_cast<T>(std::sqrt(norm_sq));

  T scale = T(1);
  if (clip > T(0) && res.grad_norm > clip) scale = clip / res.grad_norm;

  state.step += 1;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta1), state.step));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(state.beta2), state.step));
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->tensor;
    auto& slot = state.slots[i];
    const T decay_mult = params[i]->decay ? (T(1) - lr * weight_decay) : T(1);
    for (size_t j = 0; j < p.numel(); ++j) {
      const T g = p.grad[j] * scale;
      slot.m[j] = state.beta1 * slot.m[j] + (T(1) - state.beta1) * g;
      slot.v[j] = state.beta2 * slot.v[j] + (T(1) - state.beta2) * g * g;
      const T mhat = slot.m[j] / bc1;
      const T vhat = slot.v[j] / bc2;
      p.data[j] = p.data[j] * decay_mult - lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
  return res;
}

template <typename T>
inline void zero_grads(std::span<Parameter<T>* const> params) {
  for (auto* p : params) {
    p->tensor.ensure_grad();
    p->tensor.zero_grad();
  }
}

}  // namespace resq
