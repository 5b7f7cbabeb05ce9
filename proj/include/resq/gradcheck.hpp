#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "resq/autodiff.hpp"
#include "resq/optim.hpp"
#include "resq/rng.hpp"

namespace resq {

template <typename T>
struct GradCheckReport {
  T max_rel_err = T(0);
  std::string worst_param;
  size_t worst_index = 0;
  T worst_analytic = T(0);
  T worst_fd = T(0);
  size_t coords_checked = 0;
};

/// Central-difference check of the analytic gradients.
///
/// `loss_fn(with_grad)` evaluates the scalar loss at the current parameter
/// values; when `with_grad` is true it must also accumulate gradients into
/// each parameter's grad buffer. Relative error per coordinate is
/// |analytic - fd| / (|analytic| + |fd| + 1e-12). When a parameter has more
/// than `max_coords_per_param` entries a seeded subset is sampled.
template <typename T>
inline GradCheckReport<T> grad_check(const std::function<T(bool)>& loss_fn,
                                     std::span<Parameter<T>* const> params, T eps,
                                     size_t max_coords_per_param = SIZE_MAX,
                                     uint64_t sample_seed = 0x5EEDULL) {
  zero_grads(params);
  loss_fn(true);

  GradCheckReport<T> report;
  Rng rng(sample_seed);
  for (auto* p : params) {
    const size_t n = p->tensor.numel();
    std::vector<size_t> coords;
    if (n <= max_coords_per_param) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      coords.reserve(max_coords_per_param);
      for (size_t i = 0; i < max_coords_per_param; ++i)
        coords.push_back(static_cast<size_t>(rng.next_below(n)));
      std::sort(coords.begin(), coords.end());
      coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
    }
    for (size_t idx : coords) {
      const T saved = p->tensor.data[idx];
      p->tensor.data[idx] = saved + eps;
      const T up = loss_fn(false);
      p->tensor.data[idx] = saved - eps;
      const T down = loss_fn(false);
      p->tensor.data[idx] = saved;
      const T fd = (up - down) / (T(2) * eps);
      const T analytic = p->tensor.grad[idx];
      const T rel = std::abs(analytic - fd) /
                    (std::abs(analytic) + std::abs(fd) + T(1e-12));
      ++report.coords_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = p->name;
        report.worst_index = idx;
        report.worst_analytic = analytic;
        report.worst_fd = fd;
      }
    }
  }
  return report;
}

}  // namespace resq
