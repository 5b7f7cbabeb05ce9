#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "resq/kernels.hpp"
#include "resq/tensor.hpp"

namespace resq {

/// A named, trainable tensor. `decay` marks matrix parameters, the only ones
/// decoupled weight decay touches.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> tensor;
  bool decay = false;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> t, bool wd) : name(std::move(n)), tensor(std::move(t)), decay(wd) {
    tensor.ensure_grad();
  }
};

/// Reverse-mode tape. Operations append nodes in execution order; since every
/// node is created after its inputs, walking the record backwards visits each
/// node after all of its consumers. Gradient accumulation follows that fixed
/// reverse order, so backward passes are bitwise reproducible.
template <typename T>
class Tape {
 public:
  using Id = uint32_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

  const Tensor<T>& value(Id id) const { return nodes_[id].value; }
  const std::vector<T>& grad(Id id) const { return nodes_[id].grad; }

  /// Leaf holding a fixed input; gradients flow to it but nowhere further.
  Id constant(Tensor<T> v) { return push_(std::move(v), nullptr, {}); }

  /// Leaf bound to a parameter; backward() adds the leaf gradient into
  /// `p.tensor.grad`. The parameter must outlive the tape.
  Id param(Parameter<T>& p) {
    p.tensor.ensure_grad();
    Id id = push_(p.tensor /*copy of value; grad stays external*/, &p, {});
    nodes_[id].value.grad.clear();
    return id;
  }

  Id add(Id a, Id b) {
    check_same_shape(value(a), value(b), "add");
    Tensor<T> out = value(a);
    const auto& bv = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv[i];
    return push_(std::move(out), nullptr, [a, b](Tape& t, Id self) {
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    });
  }

  Id mul(Id a, Id b) {
    check_same_shape(value(a), value(b), "mul");
    Tensor<T> out = value(a);
    const auto& bv = value(b).data;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv[i];
    return push_(std::move(out), nullptr, [a, b](Tape& t, Id self) {
      const auto& g = t.nodes_[self].grad;
      const auto& av = t.nodes_[a].value.data;
      const auto& bv2 = t.nodes_[b].value.data;
      auto& ga = t.nodes_[a].grad;
      auto& gb = t.nodes_[b].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
      for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    });
  }

  Id scale(Id a, T c) {
    Tensor<T> out = value(a);
    for (auto& x : out.data) x *= c;
    return push_(std::move(out), nullptr, [a, c](Tape& t, Id self) {
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }

  /// Scalar sum of all elements; handy as a reduction head in checks.
  Id sum(Id a) {
    T s = T(0);
    for (T x : value(a).data) s += x;
    return push_(Tensor<T>({1}, {s}), nullptr, [a](Tape& t, Id self) {
      const T g = t.nodes_[self].grad[0];
      auto& ga = t.nodes_[a].grad;
      for (auto& x : ga) x += g;
    });
  }

  Id matmul(Id a, Id b) {
    Tensor<T> out = resq::matmul(value(a), value(b));
    return push_(std::move(out), nullptr, [a, b](Tape& t, Id self) {
      const auto& av = t.nodes_[a].value;
      const auto& bv = t.nodes_[b].value;
      Tensor<T> gout;
      gout.shape = t.nodes_[self].value.shape;
      gout.data = t.nodes_[self].grad;
      // dA = dC B^T, dB = A^T dC
      Tensor<T> da = resq::matmul_nt(gout, bv);
      Tensor<T> db = resq::matmul_tn(av, gout);
      t.axpy_(t.nodes_[a].grad, da.data);
      t.axpy_(t.nodes_[b].grad, db.data);
    });
  }

  /// a * b^T; used for attention scores and the tied LM head.
  Id matmul_nt(Id a, Id b) {
    Tensor<T> out = resq::matmul_nt(value(a), value(b));
    return push_(std::move(out), nullptr, [a, b](Tape& t, Id self) {
      const auto& av = t.nodes_[a].value;
      const auto& bv = t.nodes_[b].value;
      Tensor<T> gout;
      gout.shape = t.nodes_[self].value.shape;
      gout.data = t.nodes_[self].grad;
      // C = A B^T: dA = dC B, dB = dC^T A
      Tensor<T> da = resq::matmul(gout, bv);
      Tensor<T> db = resq::matmul_tn(gout, av);
      t.axpy_(t.nodes_[a].grad, da.data);
      t.axpy_(t.nodes_[b].grad, db.data);
    });
  }

  Id gelu(Id a, GeluKind kind = GeluKind::Tanh) {
    Tensor<T> out = resq::gelu(value(a), kind);
    return push_(std::move(out), nullptr, [a, kind](Tape& t, Id self) {
      const auto& g = t.nodes_[self].grad;
      const auto& xv = t.nodes_[a].value.data;
      auto& ga = t.nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * gelu_grad_scalar(xv[i], kind);
    });
  }

  Id layer_norm(Id x, Id gain, T eps) {
    std::vector<T> mean, rstd;
    Tensor<T> out = resq::layer_norm(value(x), value(gain), eps, &mean, &rstd);
    return push_(std::move(out), nullptr,
                 [x, gain, mean = std::move(mean), rstd = std::move(rstd)](Tape& t, Id self) {
                   layer_norm_backward(t.nodes_[x].value, t.nodes_[gain].value, mean, rstd,
                                       t.nodes_[self].grad.data(), t.nodes_[x].grad.data(),
                                       t.nodes_[gain].grad.data());
                 });
  }

  Id rms_norm(Id x, Id gain, T eps) {
    std::vector<T> rinv;
    Tensor<T> out = resq::rms_norm(value(x), value(gain), eps, &rinv);
    return push_(std::move(out), nullptr, [x, gain, rinv = std::move(rinv)](Tape& t, Id self) {
      rms_norm_backward(t.nodes_[x].value, t.nodes_[gain].value, rinv,
                        t.nodes_[self].grad.data(), t.nodes_[x].grad.data(),
                        t.nodes_[gain].grad.data());
    });
  }

  Id softmax_rows(Id x) {
    Tensor<T> out = resq::softmax_rows(value(x));
    return push_(std::move(out), nullptr, [x](Tape& t, Id self) {
      softmax_rows_backward(t.nodes_[self].value, t.nodes_[self].grad.data(),
                            t.nodes_[x].grad.data());
    });
  }

  /// Scalar node: mean negative log-softmax probability of `targets`.
  Id cross_entropy(Id logits, std::vector<int32_t> targets) {
    Tensor<T> probs;
    const T loss = resq::cross_entropy(value(logits), targets, &probs);
    return push_(Tensor<T>({1}, {loss}), nullptr,
                 [logits, targets = std::move(targets), probs = std::move(probs)](Tape& t, Id self) {
                   cross_entropy_backward(probs, targets, t.nodes_[self].grad[0],
                                          t.nodes_[logits].grad.data());
                 });
  }

  /// Row gather plus positional add over concatenated sequences:
  /// out[i] = tok_emb[tokens[i]] + pos_emb[i mod seq_len].
  Id embed(Id tok_emb, Id pos_emb, std::vector<int32_t> tokens, size_t seq_len) {
    const auto& te = value(tok_emb);
    const auto& pe = value(pos_emb);
    const size_t d = te.cols();
    const size_t n = tokens.size();
    if (seq_len == 0 || n % seq_len != 0 || pe.rows() < seq_len || pe.cols() != d) {
      throw ShapeError("embed: bad sequence split or positional table " + shape_str(pe.shape));
    }
    for (size_t i = 0; i < n; ++i) {
      if (tokens[i] < 0 || static_cast<size_t>(tokens[i]) >= te.rows()) {
        throw ShapeError("embed: token index " + std::to_string(tokens[i]) +
                         " out of range for vocab " + std::to_string(te.rows()));
      }
    }
    Tensor<T> out({n, d});
    for (size_t i = 0; i < n; ++i) {
      const T* trow = te.data.data() + static_cast<size_t>(tokens[i]) * d;
      const T* prow = pe.data.data() + (i % seq_len) * d;
      T* orow = out.data.data() + i * d;
      for (size_t j = 0; j < d; ++j) orow[j] = trow[j] + prow[j];
    }
    return push_(std::move(out), nullptr,
                 [tok_emb, pos_emb, tokens = std::move(tokens), seq_len](Tape& t, Id self) {
                   const auto& g = t.nodes_[self].grad;
                   const size_t d2 = t.nodes_[tok_emb].value.cols();
                   auto& gt = t.nodes_[tok_emb].grad;
                   auto& gp = t.nodes_[pos_emb].grad;
                   for (size_t i = 0; i < tokens.size(); ++i) {
                     const T* grow = g.data() + i * d2;
                     T* trow = gt.data() + static_cast<size_t>(tokens[i]) * d2;
                     T* prow = gp.data() + (i % seq_len) * d2;
                     for (size_t j = 0; j < d2; ++j) {
                       trow[j] += grow[j];
                       prow[j] += grow[j];
                     }
                   }
                 });
  }

  /// Fused multi-head causal attention (see kernels.hpp for the math).
  Id causal_attention(Id q, Id k, Id v, size_t n_head, size_t seq_len) {
    std::vector<T> probs;
    Tensor<T> out = resq::causal_attention(value(q), value(k), value(v), n_head, seq_len, &probs);
    return push_(std::move(out), nullptr,
                 [q, k, v, n_head, seq_len, probs = std::move(probs)](Tape& t, Id self) {
                   causal_attention_backward(t.nodes_[q].value, t.nodes_[k].value,
                                             t.nodes_[v].value, probs, n_head, seq_len,
                                             t.nodes_[self].grad.data(), t.nodes_[q].grad.data(),
                                             t.nodes_[k].grad.data(), t.nodes_[v].grad.data());
                 });
  }

  /// Reverse sweep from a scalar loss. Node gradients are (re)zeroed here;
  /// parameter gradients accumulate into Parameter::tensor.grad.
  void backward(Id loss) {
    if (value(loss).numel() != 1) {
      throw ShapeError("backward: loss must be scalar, got shape " +
                       shape_str(value(loss).shape));
    }
    for (auto& n : nodes_) {
      n.grad.assign(n.value.numel(), T(0));
    }
    nodes_[loss].grad[0] = T(1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(*this, static_cast<Id>(i));
    }
    for (auto& n : nodes_) {
      if (n.bound) {
        auto& pg = n.bound->tensor.grad;
        for (size_t i = 0; i < pg.size(); ++i) pg[i] += n.grad[i];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<T> grad;
    Parameter<T>* bound = nullptr;
    std::function<void(Tape&, Id)> back;
  };

  Id push_(Tensor<T> v, Parameter<T>* bound, std::function<void(Tape&, Id)> back) {
    nodes_.push_back(Node{std::move(v), {}, bound, std::move(back)});
    return static_cast<Id>(nodes_.size() - 1);
  }

  static void axpy_(std::vector<T>& dst, const std::vector<T>& src) {
    for (size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
  }

  std::vector<Node> nodes_;
};

}  // namespace resq
