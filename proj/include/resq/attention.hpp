#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "resq/kernels.hpp"
#include "resq/rng.hpp"
#include "resq/tensor.hpp"

namespace resq {

/// Numerical failure that is not a shape problem (singular matrix, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

// --------------------------------------------------------------- queries --

enum class QueryMode : uint8_t {
  Linear,       // Q = X W_Q
  Identity,     // Q = X
  ResidualGelu  // Q = query_scale * (X + f(X)), f = LN(GELU(RMSNorm(X) W1) W2)
};

inline const char* query_mode_name(QueryMode m) {
  switch (m) {
    case QueryMode::Linear: return "linear";
    case QueryMode::Identity: return "identity";
    case QueryMode::ResidualGelu: return "residual-gelu";
  }
  return "?";
}

inline QueryMode parse_query_mode(const std::string& s) {
  if (s == "linear") return QueryMode::Linear;
  if (s == "identity") return QueryMode::Identity;
  if (s == "residual-gelu" || s == "residual_gelu") return QueryMode::ResidualGelu;
  throw std::invalid_argument("unknown query mode '" + s + "'");
}

/// Parameter count of the bottleneck query map at width d:
/// W1 (d x d/2) + W2 (d/2 x d) = d^2 matrix entries, plus two gain vectors.
inline size_t ftheta_param_count(size_t d) {
  if (d % 2 != 0) {
    throw std::invalid_argument("ftheta_param_count: width must be even, got " +
                                std::to_string(d));
  }
  return d * d + 2 * d;
}

/// Position j may attend to positions <= j.
struct CausalMask {
  size_t len = 0;
  bool allowed(size_t query_pos, size_t key_pos) const { return key_pos <= query_pos; }
};

/// One attention layer's weights. w_q is present only in Linear mode; the
/// bottleneck tensors only in ResidualGelu mode. Per-head projections are
/// contiguous column blocks of width d/h.
template <typename T>
struct AttentionWeights {
  size_t d_model = 0;
  size_t n_head = 1;
  Tensor<T> w_q, w_k, w_v, w_o;
  Tensor<T> w1, w2, rms_gain, ln_gain;
  T norm_eps = T(1e-5);
  T query_scale = T(0.5);

  size_t head_dim() const { return d_model / n_head; }

  void validate(QueryMode mode) const {
    if (n_head == 0 || d_model % n_head != 0) {
      throw ShapeError("attention: d_model " + std::to_string(d_model) +
                       " not divisible by n_head " + std::to_string(n_head));
    }
    auto expect = [&](const Tensor<T>& t, size_t r, size_t c, const char* name) {
      if (t.ndim() != 2 || t.rows() != r || t.cols() != c) {
        throw ShapeError(std::string("attention: ") + name + " has shape " + shape_str(t.shape) +
                         ", expected [" + std::to_string(r) + "x" + std::to_string(c) + "]");
      }
    };
    expect(w_k, d_model, d_model, "w_k");
    expect(w_v, d_model, d_model, "w_v");
    expect(w_o, d_model, d_model, "w_o");
    if (mode == QueryMode::Linear) expect(w_q, d_model, d_model, "w_q");
    if (mode == QueryMode::ResidualGelu) {
      if (d_model % 2 != 0) {
        throw ShapeError("attention: residual-gelu mode needs even d_model, got " +
                         std::to_string(d_model));
      }
      const size_t r = d_model / 2;
      expect(w1, d_model, r, "w1");
      expect(w2, r, d_model, "w2");
      if (rms_gain.numel() != d_model || ln_gain.numel() != d_model) {
        throw ShapeError("attention: norm gains must have size d_model");
      }
    }
  }
};

/// Bottleneck map f(X) = LN(GELU(RMSNorm(X) W1) W2), applied per token row.
template <typename T>
inline Tensor<T> ftheta(const Tensor<T>& x, const AttentionWeights<T>& w) {
  Tensor<T> h = rms_norm(x, w.rms_gain, w.norm_eps);
  h = matmul(h, w.w1);
  h = gelu(h);
  h = matmul(h, w.w2);
  return layer_norm(h, w.ln_gain, w.norm_eps);
}

/// The query stream entering attention, one row per token.
template <typename T>
inline Tensor<T> query_project(const Tensor<T>& x, const AttentionWeights<T>& w, QueryMode mode) {
  if (x.ndim() != 2 || x.cols() != w.d_model) {
    throw ShapeError("query_project: input " + shape_str(x.shape) + " does not match width " +
                     std::to_string(w.d_model));
  }
  switch (mode) {
    case QueryMode::Linear:
      return matmul(x, w.w_q);
    case QueryMode::Identity:
      return x;
    case QueryMode::ResidualGelu: {
      Tensor<T> f = ftheta(x, w);
      Tensor<T> q = x;
      for (size_t i = 0; i < q.numel(); ++i) q.data[i] = (q.data[i] + f.data[i]) * w.query_scale;
      return q;
    }
  }
  throw std::invalid_argument("query_project: bad mode");
}

/// Unmasked per-head logits Q^i K^i^T / sqrt(d_k), one [n x n] tensor per head.
template <typename T>
inline std::vector<Tensor<T>> attention_logits(const Tensor<T>& x, const AttentionWeights<T>& w,
                                               QueryMode mode) {
  w.validate(mode);
  const Tensor<T> q = query_project(x, w, mode);
  const Tensor<T> k = matmul(x, w.w_k);
  const size_t n = x.rows(), dk = w.head_dim();
  const T scale = T(1) / std::sqrt(T(dk));
  std::vector<Tensor<T>> logits;
  logits.reserve(w.n_head);
  for (size_t h = 0; h < w.n_head; ++h) {
    Tensor<T> l({n, n});
    const size_t col = h * dk;
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j) {
        T dot = T(0);
        const T* qi = q.data.data() + i * w.d_model + col;
        const T* kj = k.data.data() + j * w.d_model + col;
        for (size_t p = 0; p < dk; ++p) dot += qi[p] * kj[p];
        l.data[i * n + j] = dot * scale;
      }
    logits.push_back(std::move(l));
  }
  return logits;
}

/// Reference multi-head attention: per head softmax(mask(Q K^T / sqrt(d_k))) V,
/// heads concatenated then mixed by W_O.
template <typename T>
inline Tensor<T> mha_forward(const Tensor<T>& x, const AttentionWeights<T>& w,
                             const CausalMask& mask, QueryMode mode) {
  w.validate(mode);
  const size_t n = x.rows();
  if (n > mask.len) {
    throw ShapeError("mha_forward: sequence length " + std::to_string(n) +
                     " exceeds mask length " + std::to_string(mask.len));
  }
  std::vector<Tensor<T>> logits = attention_logits(x, w, mode);
  const Tensor<T> v = matmul(x, w.w_v);
  const size_t dk = w.head_dim();
  Tensor<T> concat({n, w.d_model});
  for (size_t h = 0; h < w.n_head; ++h) {
    Tensor<T>& l = logits[h];
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < n; ++j)
        if (!mask.allowed(i, j)) l.data[i * n + j] = mask_sentinel<T>();
    const Tensor<T> probs = softmax_rows(l);
    const size_t col = h * dk;
    for (size_t i = 0; i < n; ++i) {
      T* orow = concat.data.data() + i * w.d_model + col;
      for (size_t j = 0; j < n; ++j) {
        const T p = probs.data[i * n + j];
        const T* vrow = v.data.data() + j * w.d_model + col;
        for (size_t c = 0; c < dk; ++c) orow[c] += p * vrow[c];
      }
    }
  }
  return matmul(concat, w.w_o);
}

// ---------------------------------------------------------- linear solve --

/// Solve A X = B by Gaussian elimination with partial pivoting.
template <typename T>
inline Tensor<T> solve(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || a.rows() != a.cols() || b.ndim() != 2 || b.rows() != a.rows()) {
    throw ShapeError("solve: bad shapes " + shape_str(a.shape) + ", " + shape_str(b.shape));
  }
  const size_t n = a.rows(), m = b.cols();
  Tensor<T> lu = a;
  Tensor<T> x = b;
  for (size_t col = 0; col < n; ++col) {
    size_t piv = col;
    T best = std::abs(lu.at(col, col));
    for (size_t r = col + 1; r < n; ++r) {
      const T cand = std::abs(lu.at(r, col));
      if (cand > best) {
        best = cand;
        piv = r;
      }
    }
    if (best == T(0)) {
      throw NumericalError("solve: matrix is singular (zero pivot at column " +
                           std::to_string(col) + ")");
    }
    if (piv != col) {
      for (size_t j = 0; j < n; ++j) std::swap(lu.at(col, j), lu.at(piv, j));
      for (size_t j = 0; j < m; ++j) std::swap(x.at(col, j), x.at(piv, j));
    }
    const T inv_p = T(1) / lu.at(col, col);
    for (size_t r = col + 1; r < n; ++r) {
      const T f = lu.at(r, col) * inv_p;
      if (f == T(0)) continue;
      for (size_t j = col; j < n; ++j) lu.at(r, j) -= f * lu.at(col, j);
      for (size_t j = 0; j < m; ++j) x.at(r, j) -= f * x.at(col, j);
    }
  }
  for (size_t col = n; col-- > 0;) {
    const T inv_p = T(1) / lu.at(col, col);
    for (size_t j = 0; j < m; ++j) x.at(col, j) *= inv_p;
    for (size_t r = 0; r < col; ++r) {
      const T f = lu.at(r, col);
      if (f == T(0)) continue;
      for (size_t j = 0; j < m; ++j) x.at(r, j) -= f * x.at(col, j);
    }
  }
  return x;
}

/// max |A inv(A) - I|; the invertibility test used before reparametrizing.
template <typename T>
inline T inversion_residual(const Tensor<T>& a) {
  Tensor<T> y = solve(a, Tensor<T>::identity(a.rows()));
  Tensor<T> ay = matmul(a, y);
  T resid = T(0);
  for (size_t i = 0; i < ay.rows(); ++i)
    for (size_t j = 0; j < ay.cols(); ++j) {
      const T want = (i == j) ? T(1) : T(0);
      resid = std::max(resid, std::abs(ay.at(i, j) - want));
    }
  return resid;
}

// ------------------------------------------------------- reparametrization --

template <typename T>
struct BasisChange {
  Tensor<T> x;
  AttentionWeights<T> w;
};

inline constexpr double kInvertibilityTol = 1e-6;

/// (X, W_Q, W_K, W_V) -> (X Theta, inv(Theta) W_Q, inv(Theta) W_K,
/// inv(Theta) W_V); W_O and any bottleneck parameters are untouched. Each
/// inv(Theta) W is computed by linear solve, never by explicit inversion.
/// Works in every query mode; the output-invariance contract holds only for
/// Linear (see reparametrize).
template <typename T>
inline BasisChange<T> transform_basis(const Tensor<T>& x, const AttentionWeights<T>& w,
                                      const Tensor<T>& theta) {
  if (theta.ndim() != 2 || theta.rows() != w.d_model || theta.cols() != w.d_model) {
    throw ShapeError("transform_basis: theta " + shape_str(theta.shape) + " must be [" +
                     std::to_string(w.d_model) + "x" + std::to_string(w.d_model) + "]");
  }
  const T resid = inversion_residual(theta);
  if (!(resid <= T(kInvertibilityTol))) {
    throw NumericalError("transform_basis: theta numerically singular, inversion residual " +
                         std::to_string(static_cast<double>(resid)) + " exceeds " +
                         std::to_string(kInvertibilityTol));
  }
  BasisChange<T> out{matmul(x, theta), w};
  if (!w.w_q.empty()) out.w.w_q = solve(theta, w.w_q);
  out.w.w_k = solve(theta, w.w_k);
  out.w.w_v = solve(theta, w.w_v);
  return out;
}

/// The invariance map: valid only for Linear queries, where
/// mha_forward(X', w') == mha_forward(X, w) up to floating-point tolerance.
template <typename T>
inline BasisChange<T> reparametrize(const Tensor<T>& x, const AttentionWeights<T>& w,
                                    const Tensor<T>& theta, QueryMode mode) {
  if (mode != QueryMode::Linear) {
    throw std::invalid_argument(
        "reparametrize: invariance contract requires linear queries; use "
        "transform_basis to apply the raw basis change in other modes");
  }
  w.validate(mode);
  return transform_basis(x, w, theta);
}

/// Choose Theta = W_Q, making the query projection exactly the identity.
template <typename T>
inline BasisChange<T> absorb_query(const Tensor<T>& x, const AttentionWeights<T>& w) {
  if (w.w_q.empty()) {
    throw std::invalid_argument("absorb_query: weights carry no W_Q (not linear mode)");
  }
  const T resid = inversion_residual(w.w_q);
  if (!(resid <= T(kInvertibilityTol))) {
    throw NumericalError("absorb_query: W_Q numerically singular, inversion residual " +
                         std::to_string(static_cast<double>(resid)) +
                         " exceeds tolerance " + std::to_string(kInvertibilityTol));
  }
  BasisChange<T> out = transform_basis(x, w, w.w_q);
  out.w.w_q = Tensor<T>::identity(w.d_model);  // set exactly, not computed
  return out;
}

template <typename T>
struct SymmetryReport {
  bool is_symmetric = false;
  T max_asymmetry = T(0);
};

/// Checks whether every head's unmasked logit matrix is symmetric. Trained
/// attention should come out asymmetric; W_Q == W_K forces symmetry.
template <typename T>
inline SymmetryReport<T> logits_symmetry_check(const Tensor<T>& x, const AttentionWeights<T>& w,
                                               T tol = T(1e-10)) {
  std::vector<Tensor<T>> logits = attention_logits(x, w, QueryMode::Linear);
  T worst = T(0);
  for (const auto& l : logits) {
    const size_t n = l.rows();
    for (size_t i = 0; i < n; ++i)
      for (size_t j = i + 1; j < n; ++j)
        worst = std::max(worst, std::abs(l.at(i, j) - l.at(j, i)));
  }
  return {worst <= tol, worst};
}

// ------------------------------------------------------- random weights --

/// Gaussian-initialized weights for verification trials.
template <typename T>
inline AttentionWeights<T> random_attention_weights(Rng& rng, size_t d, size_t h, QueryMode mode,
                                                    T std_dev = T(0.25)) {
  AttentionWeights<T> w;
  w.d_model = d;
  w.n_head = h;
  auto gauss = [&](Shape s) {
    Tensor<T> t(std::move(s));
    for (auto& v : t.data) v = static_cast<T>(rng.next_gaussian()) * std_dev;
    return t;
  };
  if (mode == QueryMode::Linear) w.w_q = gauss({d, d});
  w.w_k = gauss({d, d});
  w.w_v = gauss({d, d});
  w.w_o = gauss({d, d});
  if (mode == QueryMode::ResidualGelu) {
    w.w1 = gauss({d, d / 2});
    w.w2 = gauss({d / 2, d});
    w.rms_gain = Tensor<T>::full({d}, T(1));
    w.ln_gain = Tensor<T>::full({d}, T(1));
  }
  w.validate(mode);
  return w;
}

}  // namespace resq
