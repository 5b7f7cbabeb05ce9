#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "resq/tensor.hpp"

// Elementary kernels shared by the autodiff tape and the verification code.
// Every reduction runs sequentially in ascending index order, so two
// evaluations of identical inputs produce identical bytes. Keep it that way:
// nothing here may reorder a floating-point sum.

namespace resq {

// ---------------------------------------------------------------- matmul --

/// c[m,n] = a[m,k] * b[k,n]. Accumulation over k is sequential ascending;
/// the (i,k,j) loop order emits the same addition sequence per output
/// element as a naive dot product while letting the j loop vectorize.
template <typename T>
inline void matmul_kernel(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (size_t j = 0; j < n; ++j) crow[j] = T(0);
    const T* arow = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const T apk = arow[p];
      const T* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += apk * brow[j];
    }
  }
}

/// c[m,n] += a[m,k] * b[k,n]; same ordering as matmul_kernel.
template <typename T>
inline void matmul_acc_kernel(const T* a, const T* b, T* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (size_t p = 0; p < k; ++p) {
      const T apk = arow[p];
      const T* brow = b + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += apk * brow[j];
    }
  }
}

template <typename T>
inline void transpose_kernel(const T* a, T* at, size_t m, size_t n) {
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j) at[j * m + i] = a[i * n + j];
}

template <typename T>
inline Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> at({a.cols(), a.rows()});
  transpose_kernel(a.data.data(), at.data.data(), a.rows(), a.cols());
  return at;
}

template <typename T>
inline Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  Tensor<T> c({a.rows(), b.cols()});
  matmul_kernel(a.data.data(), b.data.data(), c.data.data(), a.rows(), a.cols(), b.cols());
  return c;
}

/// a[m,k] * b[n,k]^T -> [m,n]. b is transposed into scratch first so the
/// accumulation order over k matches matmul exactly.
template <typename T>
inline Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: incompatible shapes " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  std::vector<T> bt(b.numel());
  transpose_kernel(b.data.data(), bt.data(), b.rows(), b.cols());
  Tensor<T> c({a.rows(), b.rows()});
  matmul_kernel(a.data.data(), bt.data(), c.data.data(), a.rows(), a.cols(), b.rows());
  return c;
}

/// a[k,m]^T * b[k,n] -> [m,n], accumulated over the shared leading index.
template <typename T>
inline Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.rows() != b.rows()) {
    throw ShapeError("matmul_tn: incompatible shapes " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
  }
  const size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor<T> c({m, n});
  for (size_t i = 0; i < k; ++i) {
    const T* arow = a.data.data() + i * m;
    const T* brow = b.data.data() + i * n;
    for (size_t p = 0; p < m; ++p) {
      const T apk = arow[p];
      T* crow = c.data.data() + p * n;
      for (size_t j = 0; j < n; ++j) crow[j] += apk * brow[j];
    }
  }
  return c;
}

// ------------------------------------------------------------------ gelu --

enum class GeluKind : uint8_t {
  Tanh,  // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))), the GPT-2 form
  Exact  // 0.5 x (1 + erf(x / sqrt(2))), kept for oracle comparison
};

template <typename T>
inline T gelu_scalar(T x, GeluKind kind = GeluKind::Tanh) {
  if (kind == GeluKind::Exact) {
    return T(0.5) * x * (T(1) + std::erf(x * T(0.7071067811865475244008443621048490)));
  }
  constexpr double kCoef = 0.7978845608028653558798921198687637;  // sqrt(2/pi)
  const T u = T(kCoef) * (x + T(0.044715) * x * x * x);
  return T(0.5) * x * (T(1) + std::tanh(u));
}

template <typename T>
inline T gelu_grad_scalar(T x, GeluKind kind = GeluKind::Tanh) {
  if (kind == GeluKind::Exact) {
    constexpr double kInvSqrt2 = 0.7071067811865475244008443621048490;
    constexpr double kInvSqrt2Pi = 0.3989422804014326779399460599343819;
    return T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2))) +
           x * T(kInvSqrt2Pi) * std::exp(T(-0.5) * x * x);
  }
  constexpr double kCoef = 0.7978845608028653558798921198687637;
  const T u = T(kCoef) * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  const T du = T(kCoef) * (T(1) + T(3) * T(0.044715) * x * x);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
}

template <typename T>
inline Tensor<T> gelu(const Tensor<T>& x, GeluKind kind = GeluKind::Tanh) {
  Tensor<T> y;
  y.shape = x.shape;
  y.data.resize(x.numel());
  for (size_t i = 0; i < x.numel(); ++i) y.data[i] = gelu_scalar(x.data[i], kind);
  return y;
}

// ----------------------------------------------------------------- norms --

template <typename T>
inline void check_norm_args(const Tensor<T>& x, const Tensor<T>& gain, const char* op) {
  if (x.shape.empty() || x.last_dim() == 0) {
    throw ShapeError(std::string(op) + ": empty feature dimension, shape " + shape_str(x.shape));
  }
  if (gain.numel() != x.last_dim()) {
    throw ShapeError(std::string(op) + ": gain size " + std::to_string(gain.numel()) +
                     " does not match feature dim " + std::to_string(x.last_dim()));
  }
}

/// Per-row layer norm, gain only (no bias): (x - mean) / sqrt(var + eps) * g.
/// Writes per-row mean and reciprocal std into `mean`/`rstd` when non-null.
template <typename T>
inline Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps,
                            std::vector<T>* mean_out = nullptr,
                            std::vector<T>* rstd_out = nullptr) {
  check_norm_args(x, gain, "layer_norm");
  const size_t d = x.last_dim();
  const size_t rows = x.numel() / d;
  Tensor<T> y;
  y.shape = x.shape;
  y.data.resize(x.numel());
  if (mean_out) mean_out->resize(rows);
  if (rstd_out) rstd_out->resize(rows);
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = x.data.data() + r * d;
    T* yr = y.data.data() + r * d;
    T mean = T(0);
    for (size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= T(d);
    T var = T(0);
    for (size_t j = 0; j < d; ++j) {
      const T c = xr[j] - mean;
      var += c * c;
    }
    var /= T(d);
    const T rstd = T(1) / std::sqrt(var + eps);
    for (size_t j = 0; j < d; ++j) yr[j] = (xr[j] - mean) * rstd * gain.data[j];
    if (mean_out) (*mean_out)[r] = mean;
    if (rstd_out) (*rstd_out)[r] = rstd;
  }
  return y;
}

template <typename T>
inline void layer_norm_backward(const Tensor<T>& x, const Tensor<T>& gain,
                                const std::vector<T>& mean, const std::vector<T>& rstd,
                                const T* dy, T* dx, T* dgain) {
  const size_t d = x.last_dim();
  const size_t rows = x.numel() / d;
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = x.data.data() + r * d;
    const T* dyr = dy + r * d;
    T* dxr = dx + r * d;
    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
    for (size_t j = 0; j < d; ++j) {
      const T xhat = (xr[j] - mean[r]) * rstd[r];
      const T dxhat = dyr[j] * gain.data[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * xhat;
      dgain[j] += dyr[j] * xhat;
    }
    const T inv_d = T(1) / T(d);
    for (size_t j = 0; j < d; ++j) {
      const T xhat = (xr[j] - mean[r]) * rstd[r];
      const T dxhat = dyr[j] * gain.data[j];
      dxr[j] += rstd[r] * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
    }
  }
}

/// Per-row RMS norm: x / sqrt(mean(x^2) + eps) * g.
template <typename T>
inline Tensor<T> rms_norm(const Tensor<T>& x, const Tensor<T>& gain, T eps,
                          std::vector<T>* rinv_out = nullptr) {
  check_norm_args(x, gain, "rms_norm");
  const size_t d = x.last_dim();
  const size_t rows = x.numel() / d;
  Tensor<T> y;
  y.shape = x.shape;
  y.data.resize(x.numel());
  if (rinv_out) rinv_out->resize(rows);
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = x.data.data() + r * d;
    T* yr = y.data.data() + r * d;
    T ms = T(0);
    for (size_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
    ms /= T(d);
    const T rinv = T(1) / std::sqrt(ms + eps);
    for (size_t j = 0; j < d; ++j) yr[j] = xr[j] * rinv * gain.data[j];
    if (rinv_out) (*rinv_out)[r] = rinv;
  }
  return y;
}

template <typename T>
inline void rms_norm_backward(const Tensor<T>& x, const Tensor<T>& gain,
                              const std::vector<T>& rinv, const T* dy, T* dx, T* dgain) {
  const size_t d = x.last_dim();
  const size_t rows = x.numel() / d;
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = x.data.data() + r * d;
    const T* dyr = dy + r * d;
    T* dxr = dx + r * d;
    const T ri = rinv[r];
    T dot = T(0);
    for (size_t j = 0; j < d; ++j) {
      const T dyg = dyr[j] * gain.data[j];
      dot += dyg * xr[j];
      dgain[j] += dyr[j] * xr[j] * ri;
    }
    const T scale = ri * ri * ri * dot / T(d);
    for (size_t j = 0; j < d; ++j) dxr[j] += dyr[j] * gain.data[j] * ri - xr[j] * scale;
  }
}

// --------------------------------------------------------------- softmax --

/// Sentinel for masked logits. exp(-inf - max) is exactly zero, so masked
/// positions contribute exactly 0 probability.
template <typename T>
constexpr T mask_sentinel() {
  return -std::numeric_limits<T>::infinity();
}

/// Max-subtracted exponential normalization per row of the last dimension.
template <typename T>
inline Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.shape.empty() || x.last_dim() == 0) {
    throw ShapeError("softmax_rows: empty rows, shape " + shape_str(x.shape));
  }
  const size_t d = x.last_dim();
  const size_t rows = x.numel() / d;
  Tensor<T> y;
  y.shape = x.shape;
  y.data.resize(x.numel());
  for (size_t r = 0; r < rows; ++r) {
    const T* xr = x.data.data() + r * d;
    T* yr = y.data.data() + r * d;
    T mx = xr[0];
    for (size_t j = 1; j < d; ++j) mx = std::max(mx, xr[j]);
    T sum = T(0);
    for (size_t j = 0; j < d; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T(1) / sum;
    for (size_t j = 0; j < d; ++j) yr[j] *= inv;
  }
  return y;
}

/// dx += y * (dy - rowdot(dy, y)) given y = softmax_rows(x).
template <typename T>
inline void softmax_rows_backward(const Tensor<T>& y, const T* dy, T* dx) {
  const size_t d = y.last_dim();
  const size_t rows = y.numel() / d;
  for (size_t r = 0; r < rows; ++r) {
    const T* yr = y.data.data() + r * d;
    const T* dyr = dy + r * d;
    T* dxr = dx + r * d;
    T dot = T(0);
    for (size_t j = 0; j < d; ++j) dot += dyr[j] * yr[j];
    for (size_t j = 0; j < d; ++j) dxr[j] += yr[j] * (dyr[j] - dot);
  }
}

// --------------------------------------------------------- cross entropy --

/// Mean negative log-softmax probability of the targets.
template <typename T>
inline T cross_entropy(const Tensor<T>& logits, const std::vector<int32_t>& targets,
                       Tensor<T>* probs_out = nullptr) {
  if (logits.ndim() != 2 || logits.rows() != targets.size()) {
    throw ShapeError("cross_entropy: logits " + shape_str(logits.shape) + " vs " +
                     std::to_string(targets.size()) + " targets");
  }
  const size_t n = logits.rows(), v = logits.cols();
  for (size_t i = 0; i < n; ++i) {
    if (targets[i] < 0 || static_cast<size_t>(targets[i]) >= v) {
      throw ShapeError("cross_entropy: target " + std::to_string(targets[i]) + " at row " +
                       std::to_string(i) + " out of range for vocab " + std::to_string(v));
    }
  }
  if (probs_out) {
    probs_out->shape = logits.shape;
    probs_out->data.resize(logits.numel());
  }
  T loss = T(0);
  for (size_t i = 0; i < n; ++i) {
    const T* row = logits.data.data() + i * v;
    T mx = row[0];
    for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    T sum = T(0);
    for (size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    const T lse = mx + std::log(sum);
    loss += lse - row[targets[i]];
    if (probs_out) {
      T* pr = probs_out->data.data() + i * v;
      const T inv = T(1) / sum;
      for (size_t j = 0; j < v; ++j) pr[j] = std::exp(row[j] - mx) * inv;
    }
  }
  return loss / T(n);
}

/// dlogits += (softmax - onehot(target)) * dloss / n.
template <typename T>
inline void cross_entropy_backward(const Tensor<T>& probs, const std::vector<int32_t>& targets,
                                   T dloss, T* dlogits) {
  const size_t n = probs.rows(), v = probs.cols();
  const T scale = dloss / T(n);
  for (size_t i = 0; i < n; ++i) {
    const T* pr = probs.data.data() + i * v;
    T* dr = dlogits + i * v;
    for (size_t j = 0; j < v; ++j) dr[j] += pr[j] * scale;
    dr[targets[i]] -= scale;
  }
}

// ------------------------------------------------------- fused attention --

/// Multi-head causal attention over batched sequences. q/k/v are [N, d] with
/// N a multiple of seq_len; each seq_len-row block attends within itself.
/// Per head: out = softmax(mask(q k^T / sqrt(d_k))) v, heads concatenated.
/// `probs` receives the attention rows (n_seq * n_head * n * n) for backward.
template <typename T>
inline Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                  size_t n_head, size_t seq_len,
                                  std::vector<T>* probs_out = nullptr) {
  if (q.shape != k.shape || q.shape != v.shape || q.ndim() != 2) {
    throw ShapeError("causal_attention: q/k/v shapes must match, got " + shape_str(q.shape) +
                     " " + shape_str(k.shape) + " " + shape_str(v.shape));
  }
  const size_t n_rows = q.rows(), d = q.cols();
  if (n_head == 0 || d % n_head != 0 || seq_len == 0 || n_rows % seq_len != 0) {
    throw ShapeError("causal_attention: bad head/sequence split for " + shape_str(q.shape));
  }
  const size_t dk = d / n_head;
  const size_t n_seq = n_rows / seq_len;
  const T inv_sqrt_dk = T(1) / std::sqrt(T(dk));
  Tensor<T> out({n_rows, d});
  if (probs_out) probs_out->assign(n_seq * n_head * seq_len * seq_len, T(0));
  for (size_t s = 0; s < n_seq; ++s) {
    const size_t base = s * seq_len;
    for (size_t h = 0; h < n_head; ++h) {
      const size_t col = h * dk;
      T* pbase = probs_out ? probs_out->data() + (s * n_head + h) * seq_len * seq_len : nullptr;
      std::vector<T> row(seq_len);
      for (size_t i = 0; i < seq_len; ++i) {
        const T* qi = q.data.data() + (base + i) * d + col;
        T mx = -std::numeric_limits<T>::infinity();
        for (size_t j = 0; j <= i; ++j) {
          const T* kj = k.data.data() + (base + j) * d + col;
          T dot = T(0);
          for (size_t p = 0; p < dk; ++p) dot += qi[p] * kj[p];
          row[j] = dot * inv_sqrt_dk;
          mx = std::max(mx, row[j]);
        }
        T sum = T(0);
        for (size_t j = 0; j <= i; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        const T inv = T(1) / sum;
        T* orow = out.data.data() + (base + i) * d + col;
        for (size_t j = 0; j <= i; ++j) {
          const T p = row[j] * inv;
          if (pbase) pbase[i * seq_len + j] = p;
          const T* vj = v.data.data() + (base + j) * d + col;
          for (size_t c = 0; c < dk; ++c) orow[c] += p * vj[c];
        }
      }
    }
  }
  return out;
}

/// Backward of causal_attention. `probs` is the buffer filled by forward.
template <typename T>
inline void causal_attention_backward(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                      const std::vector<T>& probs, size_t n_head, size_t seq_len,
                                      const T* dout, T* dq, T* dk_, T* dv) {
  const size_t n_rows = q.rows(), d = q.cols();
  const size_t dk = d / n_head;
  const size_t n_seq = n_rows / seq_len;
  const T inv_sqrt_dk = T(1) / std::sqrt(T(dk));
  std::vector<T> dscore(seq_len);
  for (size_t s = 0; s < n_seq; ++s) {
    const size_t base = s * seq_len;
    for (size_t h = 0; h < n_head; ++h) {
      const size_t col = h * dk;
      const T* pbase = probs.data() + (s * n_head + h) * seq_len * seq_len;
      for (size_t i = 0; i < seq_len; ++i) {
        const T* prow = pbase + i * seq_len;
        const T* drow = dout + (base + i) * d + col;
        // dP[j] = dout_i . v_j ; dS = P * (dP - sum_j dP[j] P[j])
        T dot_acc = T(0);
        for (size_t j = 0; j <= i; ++j) {
          const T* vj = v.data.data() + (base + j) * d + col;
          T dp = T(0);
          for (size_t c = 0; c < dk; ++c) dp += drow[c] * vj[c];
          dscore[j] = dp;
          dot_acc += dp * prow[j];
        }
        for (size_t j = 0; j <= i; ++j) {
          const T p = prow[j];
          const T ds = p * (dscore[j] - dot_acc) * inv_sqrt_dk;
          const T* qi = q.data.data() + (base + i) * d + col;
          const T* kj = k.data.data() + (base + j) * d + col;
          T* dqi = dq + (base + i) * d + col;
          T* dkj = dk_ + (base + j) * d + col;
          T* dvj = dv + (base + j) * d + col;
          for (size_t c = 0; c < dk; ++c) {
            dqi[c] += ds * kj[c];
            dkj[c] += ds * qi[c];
            dvj[c] += p * drow[c];
          }
        }
      }
    }
  }
}

}  // namespace resq
