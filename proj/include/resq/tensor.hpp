#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace resq {

/// Thrown on any precondition violation (shape mismatch, bad index, ...).
class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major tensor. `grad` stays empty unless gradient tracking is
/// requested; when present it has the same length as `data`.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;

  Tensor() = default;

  explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}

  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (shape_numel(shape) != data.size()) {
      throw ShapeError("tensor: shape " + shape_str(shape) + " does not match " +
                       std::to_string(data.size()) + " values");
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, T value) {
    Tensor t(std::move(s));
    std::fill(t.data.begin(), t.data.end(), value);
    return t;
  }

  static Tensor identity(size_t d) {
    Tensor t({d, d});
    for (size_t i = 0; i < d; ++i) t.data[i * d + i] = T(1);
    return t;
  }

  size_t numel() const { return data.size(); }
  bool empty() const { return data.empty(); }
  size_t ndim() const { return shape.size(); }

  size_t rows() const {
    if (shape.size() != 2) throw ShapeError("rows(): tensor is not 2-D, shape " + shape_str(shape));
    return shape[0];
  }
  size_t cols() const {
    if (shape.size() != 2) throw ShapeError("cols(): tensor is not 2-D, shape " + shape_str(shape));
    return shape[1];
  }

  T& at(size_t i, size_t j) { return data[i * cols() + j]; }
  const T& at(size_t i, size_t j) const { return data[i * cols() + j]; }

  /// Size of the trailing dimension; the per-row width for normalization ops.
  size_t last_dim() const {
    if (shape.empty()) throw ShapeError("last_dim(): tensor has no shape");
    return shape.back();
  }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
  void zero_grad() {
    std::fill(grad.begin(), grad.end(), T(0));
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
inline bool same_shape(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape;
}

template <typename T>
inline void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!same_shape(a, b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
}

}  // namespace resq
