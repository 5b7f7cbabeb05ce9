#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "resq/attention.hpp"
#include "resq/autodiff.hpp"
#include "resq/rng.hpp"
#include "resq/tensor.hpp"

namespace resq {

// ---------------------------------------------------------------- config --

struct ModelConfig {
  size_t n_layer = 4;
  size_t n_head = 4;
  size_t d_model = 64;
  double mlp_mult = 4.0;       // hidden width of the MLP as a multiple of d_model
  size_t context_len = 128;
  size_t vocab_size = 256;
  QueryMode query_mode = QueryMode::Linear;
  double norm_eps = 1e-5;
  double query_scale = 0.5;    // Q = query_scale * (X + f(X)) in ResidualGelu mode

  size_t mlp_hidden() const {
    return static_cast<size_t>(std::llround(mlp_mult * static_cast<double>(d_model)));
  }
  size_t head_dim() const { return d_model / n_head; }

  void validate() const {
    if (n_layer == 0) throw std::invalid_argument("n_layer must be positive");
    if (n_head == 0) throw std::invalid_argument("n_head must be positive");
    if (d_model == 0 || d_model % n_head != 0) {
      throw std::invalid_argument("d_model must be a positive multiple of n_head");
    }
    if (context_len == 0) throw std::invalid_argument("context_len must be positive");
    if (vocab_size == 0) throw std::invalid_argument("vocab_size must be positive");
    if (mlp_hidden() == 0) throw std::invalid_argument("mlp_mult too small: hidden width is 0");
    if (!(norm_eps > 0.0)) throw std::invalid_argument("norm_eps must be positive");
    if (!std::isfinite(query_scale)) throw std::invalid_argument("query_scale must be finite");
    if (query_mode == QueryMode::ResidualGelu && d_model % 2 != 0) {
      throw std::invalid_argument("residual-gelu query needs even d_model (bottleneck d/2)");
    }
  }
};

// ------------------------------------------------------------ parameters --

template <typename T>
struct LayerParams {
  Parameter<T> ln1_gain;
  Parameter<T> w_q;       // Linear mode only
  Parameter<T> fq_w1;     // ResidualGelu mode only: d x d/2
  Parameter<T> fq_w2;     //                         d/2 x d
  Parameter<T> fq_rms_gain;
  Parameter<T> fq_ln_gain;
  Parameter<T> w_k, w_v, w_o;
  Parameter<T> ln2_gain;
  Parameter<T> mlp_w_in, mlp_w_out;
};

/// Decoder-only transformer with tied input/output embeddings, pre-norm
/// blocks, no biases, and a pluggable query projection.
template <typename T>
struct TransformerParams {
  ModelConfig config;
  Parameter<T> tok_emb;   // vocab_size x d_model, also the output head (tied)
  Parameter<T> pos_emb;   // context_len x d_model
  std::vector<LayerParams<T>> layers;
  Parameter<T> final_ln_gain;

  /// Canonical parameter order: embeddings, blocks in depth order, final
  /// norm. Initialization draws, the optimizer walk, and the checkpoint
  /// layout all use this order.
  std::vector<Parameter<T>*> all() {
    std::vector<Parameter<T>*> out;
    out.push_back(&tok_emb);
    out.push_back(&pos_emb);
    for (auto& l : layers) {
      out.push_back(&l.ln1_gain);
      if (config.query_mode == QueryMode::Linear) out.push_back(&l.w_q);
      if (config.query_mode == QueryMode::ResidualGelu) {
        out.push_back(&l.fq_w1);
        out.push_back(&l.fq_w2);
        out.push_back(&l.fq_rms_gain);
        out.push_back(&l.fq_ln_gain);
      }
      out.push_back(&l.w_k);
      out.push_back(&l.w_v);
      out.push_back(&l.w_o);
      out.push_back(&l.ln2_gain);
      out.push_back(&l.mlp_w_in);
      out.push_back(&l.mlp_w_out);
    }
    out.push_back(&final_ln_gain);
    return out;
  }
};

/// Seeded Gaussian init: every matrix entry is drawn in canonical parameter
/// order with std 0.02; matrices that write onto the residual stream (w_o,
/// mlp_w_out, fq_w2) are scaled by 1/sqrt(2*n_layer); norm gains start at 1
/// and consume no draws. Matrices carry weight decay, vectors do not.
template <typename T>
TransformerParams<T> init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  TransformerParams<T> p;
  p.config = config;
  Rng rng(seed);
  const size_t d = config.d_model;
  const size_t m = config.mlp_hidden();
  const T base_std = static_cast<T>(0.02);
  const T resid_std =
      static_cast<T>(0.02 / std::sqrt(2.0 * static_cast<double>(config.n_layer)));

  auto gauss = [&](Parameter<T>& par, const std::string& name, Shape shape, T std_dev) {
    par.name = name;
    par.decay = true;
    par.tensor = Tensor<T>::zeros(std::move(shape));
    for (auto& v : par.tensor.data) v = static_cast<T>(rng.next_gaussian()) * std_dev;
  };
  auto ones = [&](Parameter<T>& par, const std::string& name, size_t n) {
    par.name = name;
    par.decay = false;
    par.tensor = Tensor<T>::full({n}, static_cast<T>(1));
  };

  gauss(p.tok_emb, "tok_emb", {config.vocab_size, d}, base_std);
  gauss(p.pos_emb, "pos_emb", {config.context_len, d}, base_std);
  p.layers.resize(config.n_layer);
  for (size_t i = 0; i < config.n_layer; ++i) {
    auto& l = p.layers[i];
    const std::string b = "block" + std::to_string(i) + ".";
    ones(l.ln1_gain, b + "ln1.gain", d);
    if (config.query_mode == QueryMode::Linear) gauss(l.w_q, b + "attn.w_q", {d, d}, base_std);
    if (config.query_mode == QueryMode::ResidualGelu) {
      gauss(l.fq_w1, b + "attn.f.w1", {d, d / 2}, base_std);
      gauss(l.fq_w2, b + "attn.f.w2", {d / 2, d}, resid_std);
      ones(l.fq_rms_gain, b + "attn.f.rms_gain", d);
      ones(l.fq_ln_gain, b + "attn.f.ln_gain", d);
    }
    gauss(l.w_k, b + "attn.w_k", {d, d}, base_std);
    gauss(l.w_v, b + "attn.w_v", {d, d}, base_std);
    gauss(l.w_o, b + "attn.w_o", {d, d}, resid_std);
    ones(l.ln2_gain, b + "ln2.gain", d);
    gauss(l.mlp_w_in, b + "mlp.w_in", {d, m}, base_std);
    gauss(l.mlp_w_out, b + "mlp.w_out", {m, d}, resid_std);
  }
  ones(p.final_ln_gain, "final_ln.gain", d);
  return p;
}

// ------------------------------------------------------------- counting --

struct ParamCounts {
  size_t embedding = 0;      // token + positional tables
  size_t attention = 0;      // projection matrices across all blocks
  size_t query_residual = 0; // the nonlinear query map f, when present
  size_t mlp = 0;
  size_t norms = 0;          // all norm gains
  size_t non_embedding = 0;
  size_t total = 0;
};

inline ParamCounts count_params(const ModelConfig& config) {
  config.validate();
  const size_t d = config.d_model;
  const size_t L = config.n_layer;
  const size_t m = config.mlp_hidden();
  ParamCounts c;
  c.embedding = config.vocab_size * d + config.context_len * d;
  size_t attn_per_layer = 0;
  switch (config.query_mode) {
    case QueryMode::Linear: attn_per_layer = 4 * d * d; break;
    case QueryMode::Identity: attn_per_layer = 3 * d * d; break;
    case QueryMode::ResidualGelu:
      attn_per_layer = 3 * d * d;
      c.query_residual = L * ftheta_param_count(d);
      break;
  }
  c.attention = L * attn_per_layer;
  c.mlp = L * 2 * d * m;
  c.norms = L * 2 * d + d;  // f's own gains are counted under query_residual
  c.non_embedding = c.attention + c.query_residual + c.mlp + c.norms;
  c.total = c.embedding + c.non_embedding;
  return c;
}

/// Fractional loss improvement of `loss` over `base` (positive = better).
inline double relative_improvement(double base, double loss) {
  if (!(base > 0.0) || !std::isfinite(base)) {
    throw std::invalid_argument("baseline loss must be finite and positive");
  }
  if (!std::isfinite(loss)) throw std::invalid_argument("loss must be finite");
  return (base - loss) / base;
}

// -------------------------------------------------------------- forward --

/// Record the full forward pass on the tape and return the logits node
/// ([N, vocab]). `tokens` is one or more sequences of length `seq_len`
/// laid end to end; attention never crosses a sequence boundary.
template <typename T>
typename Tape<T>::Id forward_logits(Tape<T>& tape, TransformerParams<T>& params,
                                    const std::vector<int32_t>& tokens, size_t seq_len) {
  const ModelConfig& cfg = params.config;
  if (seq_len == 0 || seq_len > cfg.context_len) {
    throw std::invalid_argument("seq_len " + std::to_string(seq_len) +
                                " outside [1, context_len=" + std::to_string(cfg.context_len) + "]");
  }
  if (tokens.empty() || tokens.size() % seq_len != 0) {
    throw std::invalid_argument("token count must be a positive multiple of seq_len");
  }
  using Id = typename Tape<T>::Id;
  const Id tok = tape.param(params.tok_emb);
  const Id pos = tape.param(params.pos_emb);
  Id x = tape.embed(tok, pos, tokens, seq_len);
  for (auto& l : params.layers) {
    // attention sublayer
    const Id a = tape.layer_norm(x, tape.param(l.ln1_gain), static_cast<T>(cfg.norm_eps));
    Id q;
    switch (cfg.query_mode) {
      case QueryMode::Linear: q = tape.matmul(a, tape.param(l.w_q)); break;
      case QueryMode::Identity: q = a; break;
      case QueryMode::ResidualGelu: {
        const Id r = tape.rms_norm(a, tape.param(l.fq_rms_gain), static_cast<T>(cfg.norm_eps));
        const Id h = tape.gelu(tape.matmul(r, tape.param(l.fq_w1)));
        const Id f = tape.layer_norm(tape.matmul(h, tape.param(l.fq_w2)),
                                     tape.param(l.fq_ln_gain), static_cast<T>(cfg.norm_eps));
        q = tape.scale(tape.add(a, f), static_cast<T>(cfg.query_scale));
        break;
      }
    }
    const Id k = tape.matmul(a, tape.param(l.w_k));
    const Id v = tape.matmul(a, tape.param(l.w_v));
    const Id att = tape.causal_attention(q, k, v, cfg.n_head, seq_len);
    x = tape.add(x, tape.matmul(att, tape.param(l.w_o)));
    // mlp sublayer
    const Id b = tape.layer_norm(x, tape.param(l.ln2_gain), static_cast<T>(cfg.norm_eps));
    const Id h = tape.gelu(tape.matmul(b, tape.param(l.mlp_w_in)));
    x = tape.add(x, tape.matmul(h, tape.param(l.mlp_w_out)));
  }
  const Id f = tape.layer_norm(x, tape.param(params.final_ln_gain), static_cast<T>(cfg.norm_eps));
  return tape.matmul_nt(f, tok);  // tied output head
}

/// Mean next-token cross-entropy of `tokens` against `targets`, recorded on
/// the tape. Returns the scalar loss node.
template <typename T>
typename Tape<T>::Id forward_loss(Tape<T>& tape, TransformerParams<T>& params,
                                  const std::vector<int32_t>& tokens,
                                  const std::vector<int32_t>& targets, size_t seq_len) {
  if (targets.size() != tokens.size()) {
    throw std::invalid_argument("tokens and targets must have equal length");
  }
  const auto logits = forward_logits(tape, params, tokens, seq_len);
  return tape.cross_entropy(logits, targets);
}

/// Gradient-free forward pass; returns the logits tensor.
template <typename T>
Tensor<T> forward(TransformerParams<T>& params, const std::vector<int32_t>& tokens,
                  size_t seq_len) {
  Tape<T> tape;
  return tape.value(forward_logits(tape, params, tokens, seq_len));
}

/// Copy one block's attention-side weights into the standalone attention
/// container, for cross-checking the model against the algebraic tools.
template <typename T>
AttentionWeights<T> attention_weights_of(const TransformerParams<T>& params, size_t layer) {
  if (layer >= params.layers.size()) throw std::invalid_argument("layer index out of range");
  const auto& l = params.layers[layer];
  AttentionWeights<T> w;
  w.d_model = params.config.d_model;
  w.n_head = params.config.n_head;
  w.norm_eps = static_cast<T>(params.config.norm_eps);
  w.query_scale = static_cast<T>(params.config.query_scale);
  w.w_q = l.w_q.tensor;
  w.w_k = l.w_k.tensor;
  w.w_v = l.w_v.tensor;
  w.w_o = l.w_o.tensor;
  w.w1 = l.fq_w1.tensor;
  w.w2 = l.fq_w2.tensor;
  w.rms_gain = l.fq_rms_gain.tensor;
  w.ln_gain = l.fq_ln_gain.tensor;
  return w;
}

}  // namespace resq
