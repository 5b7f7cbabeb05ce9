#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "resq/attention.hpp"
#include "resq/rng.hpp"
#include "resq/tensor.hpp"

namespace resq {

// Randomized verification of the algebraic claims: a linear query projection
// can be pushed into the input basis without changing the attention output
// (and absorbed outright, W_Q -> I), while the nonlinear residual query
// breaks that equivalence for generic basis changes.

struct InvarianceReport {
  size_t trials = 0;
  double max_deviation = 0.0;
  size_t worst_trial = 0;
  std::vector<double> deviations;     // one per trial
  bool identity_exact = true;         // absorption suite: W_Q bitwise identity in every trial

  size_t count_above(double threshold) const {
    return static_cast<size_t>(
        std::count_if(deviations.begin(), deviations.end(),
                      [&](double d) { return d > threshold; }));
  }
  size_t count_at_most(double threshold) const { return trials - count_above(threshold); }
};

namespace verify_detail {

template <typename T>
inline Tensor<T> random_matrix(Rng& rng, size_t r, size_t c, T std_dev) {
  Tensor<T> t({r, c});
  for (auto& v : t.data) v = static_cast<T>(rng.next_gaussian()) * std_dev;
  return t;
}

/// A random basis change near the identity, redrawn (deterministically)
/// until it passes the invertibility residual test.
template <typename T>
inline Tensor<T> random_theta(Rng& rng, size_t d) {
  for (int attempt = 0; attempt < 64; ++attempt) {
    Tensor<T> theta = random_matrix<T>(rng, d, d, T(0.35));
    for (size_t i = 0; i < d; ++i) theta.at(i, i) += T(1);
    if (inversion_residual(theta) <= T(kInvertibilityTol)) return theta;
  }
  throw NumericalError("random_theta: could not draw an invertible basis change");
}

template <typename T>
inline double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "max_abs_diff");
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, std::abs(static_cast<double>(a.data[i]) -
                                     static_cast<double>(b.data[i])));
  }
  return worst;
}

}  // namespace verify_detail

/// Eq.-style invariance: mha(X Theta, basis-changed weights) vs mha(X, w)
/// with linear queries, over `trials` random draws.
inline InvarianceReport reparametrization_suite(uint64_t seed, size_t trials, size_t d, size_t h,
                                                size_t n) {
  using verify_detail::max_abs_diff;
  using verify_detail::random_matrix;
  using verify_detail::random_theta;
  Rng rng(seed);
  InvarianceReport rep;
  rep.trials = trials;
  const CausalMask mask{n};
  for (size_t t = 0; t < trials; ++t) {
    const auto w = random_attention_weights<double>(rng, d, h, QueryMode::Linear);
    const auto x = random_matrix<double>(rng, n, d, 1.0);
    const auto theta = random_theta<double>(rng, d);
    const auto before = mha_forward(x, w, mask, QueryMode::Linear);
    const auto moved = reparametrize(x, w, theta, QueryMode::Linear);
    const auto after = mha_forward(moved.x, moved.w, mask, QueryMode::Linear);
    const double dev = max_abs_diff(before, after);
    rep.deviations.push_back(dev);
    if (dev > rep.max_deviation) {
      rep.max_deviation = dev;
      rep.worst_trial = t;
    }
  }
  return rep;
}

/// Absorption: Theta = W_Q, after which W_Q must be bitwise identity and the
/// output unchanged.
inline InvarianceReport absorption_suite(uint64_t seed, size_t trials, size_t d, size_t h,
                                         size_t n) {
  using verify_detail::max_abs_diff;
  using verify_detail::random_matrix;
  Rng rng(seed);
  InvarianceReport rep;
  rep.trials = trials;
  const CausalMask mask{n};
  const Tensor<double> eye = Tensor<double>::identity(d);
  for (size_t t = 0; t < trials; ++t) {
    const auto w = random_attention_weights<double>(rng, d, h, QueryMode::Linear);
    const auto x = random_matrix<double>(rng, n, d, 1.0);
    const auto before = mha_forward(x, w, mask, QueryMode::Linear);
    const auto absorbed = absorb_query(x, w);
    if (absorbed.w.w_q.data != eye.data) rep.identity_exact = false;
    const auto after = mha_forward(absorbed.x, absorbed.w, mask, QueryMode::Linear);
    const double dev = max_abs_diff(before, after);
    rep.deviations.push_back(dev);
    if (dev > rep.max_deviation) {
      rep.max_deviation = dev;
      rep.worst_trial = t;
    }
  }
  return rep;
}

/// Escape: the same basis change applied with the nonlinear residual query.
/// Here deviations should be LARGE — the equivalence class is gone.
inline InvarianceReport escape_suite(uint64_t seed, size_t trials, size_t d, size_t h, size_t n) {
  using verify_detail::max_abs_diff;
  using verify_detail::random_matrix;
  using verify_detail::random_theta;
  Rng rng(seed);
  InvarianceReport rep;
  rep.trials = trials;
  const CausalMask mask{n};
  for (size_t t = 0; t < trials; ++t) {
    const auto w = random_attention_weights<double>(rng, d, h, QueryMode::ResidualGelu);
    const auto x = random_matrix<double>(rng, n, d, 1.0);
    const auto theta = random_theta<double>(rng, d);
    const auto before = mha_forward(x, w, mask, QueryMode::ResidualGelu);
    const auto moved = transform_basis(x, w, theta);
    const auto after = mha_forward(moved.x, moved.w, mask, QueryMode::ResidualGelu);
    const double dev = max_abs_diff(before, after);
    rep.deviations.push_back(dev);
    if (dev > rep.max_deviation) {
      rep.max_deviation = dev;
      rep.worst_trial = t;
    }
  }
  return rep;
}

}  // namespace resq
