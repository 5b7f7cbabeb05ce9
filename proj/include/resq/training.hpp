#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "resq/io.hpp"
#include "resq/model.hpp"
#include "resq/optim.hpp"
#include "resq/rng.hpp"

namespace resq {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

// ------------------------------------------------------------- tokenizer --

enum class TokenizerKind { Byte, Char };

/// Fraction of the token stream used for training; the tail is validation.
inline constexpr double kTrainFrac = 0.9;

struct Tokenized {
  TokenizerKind kind = TokenizerKind::Byte;
  std::vector<int32_t> tokens;
  std::vector<uint8_t> alphabet;  // Char mode: sorted distinct bytes; empty in Byte mode
  size_t train_len = 0;           // tokens[0, train_len) train, remainder validation

  size_t vocab_size() const {
    return kind == TokenizerKind::Byte ? 256 : alphabet.size();
  }
};

/// Byte mode maps each byte to itself (V = 256); Char mode builds a sorted
/// alphabet of the distinct bytes present and indexes into it. The stream is
/// split train/val at floor(train_frac * length).
inline Tokenized tokenize_corpus(std::string_view text, TokenizerKind kind = TokenizerKind::Byte,
                                 double train_frac = kTrainFrac) {
  if (text.empty()) throw TrainError("corpus is empty");
  if (!(train_frac > 0.0 && train_frac < 1.0)) {
    throw TrainError("train fraction must lie in (0, 1)");
  }
  Tokenized t;
  t.kind = kind;
  t.tokens.reserve(text.size());
  if (kind == TokenizerKind::Byte) {
    for (unsigned char c : text) t.tokens.push_back(static_cast<int32_t>(c));
  } else {
    bool present[256] = {};
    for (unsigned char c : text) present[c] = true;
    int32_t index[256];
    for (int b = 0; b < 256; ++b) {
      index[b] = -1;
      if (present[b]) {
        index[b] = static_cast<int32_t>(t.alphabet.size());
        t.alphabet.push_back(static_cast<uint8_t>(b));
      }
    }
    for (unsigned char c : text) t.tokens.push_back(index[c]);
  }
  t.train_len = static_cast<size_t>(train_frac * static_cast<double>(t.tokens.size()));
  return t;
}

inline std::string detokenize(const Tokenized& t, std::span<const int32_t> tokens) {
  std::string out;
  out.reserve(tokens.size());
  const int32_t vocab = static_cast<int32_t>(t.vocab_size());
  for (int32_t tok : tokens) {
    if (tok < 0 || tok >= vocab) {
      throw TrainError("token " + std::to_string(tok) + " outside vocabulary of " +
                       std::to_string(vocab));
    }
    out.push_back(t.kind == TokenizerKind::Byte ? static_cast<char>(tok)
                                                : static_cast<char>(t.alphabet[tok]));
  }
  return out;
}

/// Entropy (nats) of the token unigram distribution — the loss of the best
/// context-free predictor, used as the bar for training smoke tests.
inline double unigram_entropy(std::span<const int32_t> tokens, size_t vocab) {
  if (tokens.empty()) throw TrainError("cannot take entropy of an empty stream");
  std::vector<size_t> counts(vocab, 0);
  for (int32_t t : tokens) {
    if (t < 0 || static_cast<size_t>(t) >= vocab) throw TrainError("token outside vocabulary");
    ++counts[static_cast<size_t>(t)];
  }
  const double n = static_cast<double>(tokens.size());
  double h = 0.0;
  for (size_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / n;
    h -= p * std::log(p);
  }
  return h;
}

// ---------------------------------------------------------------- config --

struct TrainConfig {
  double max_lr = 6e-4;
  double min_lr = 6e-5;
  size_t warmup_steps = 2000;
  size_t total_steps = 60000;
  double weight_decay = 0.1;
  double grad_clip = 1.0;
  size_t eval_interval = 1000;
  size_t eval_sequences = 64;
  size_t batch_size = 16;
  size_t micro_steps = 1;  // gradient accumulation: batch_size split into micro_steps chunks
  uint64_t seed = 0;

  void validate() const {
    if (!(max_lr > 0.0)) throw TrainError("max_lr must be positive");
    if (!(min_lr >= 0.0) || min_lr > max_lr) throw TrainError("need 0 <= min_lr <= max_lr");
    if (total_steps > 0 && warmup_steps >= total_steps) {
      throw TrainError("warmup_steps must be below total_steps");
    }
    if (!(grad_clip > 0.0)) throw TrainError("grad_clip must be positive");
    if (weight_decay < 0.0) throw TrainError("weight_decay must be non-negative");
    if (eval_interval == 0) throw TrainError("eval_interval must be positive");
    if (batch_size == 0) throw TrainError("batch_size must be positive");
    if (micro_steps == 0 || batch_size % micro_steps != 0) {
      throw TrainError("micro_steps must divide batch_size");
    }
  }
};

/// Linear warmup from 0 to max_lr over warmup_steps, then cosine decay to
/// min_lr at total_steps. Steps are 1-based; the joint at step = warmup_steps
/// evaluates to max_lr from both branches.
inline double lr_schedule(size_t step, const TrainConfig& cfg) {
  if (step > cfg.total_steps) throw TrainError("step beyond end of schedule");
  if (step <= cfg.warmup_steps) {
    if (cfg.warmup_steps == 0) return cfg.max_lr;
    return cfg.max_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  const double t = static_cast<double>(step - cfg.warmup_steps) /
                   static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.min_lr + 0.5 * (cfg.max_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

// ------------------------------------------------------------ batch plan --

/// Every sequence offset for every step, drawn up front from a seeded
/// generator so that runs with different models consume identical data.
/// Training offsets land inside the train split, validation offsets inside
/// the val split; both leave room for the shifted target window.
struct BatchPlan {
  uint64_t seed = 0;
  size_t steps = 0;
  size_t batch_size = 0;
  size_t context_len = 0;
  std::vector<size_t> train_offsets;  // steps x batch_size, row-major by step
  std::vector<size_t> val_offsets;    // eval_sequences entries

  std::span<const size_t> step_offsets(size_t step_index) const {
    if (step_index >= steps) throw TrainError("step index beyond plan");
    return {train_offsets.data() + step_index * batch_size, batch_size};
  }
  friend bool operator==(const BatchPlan&, const BatchPlan&) = default;
};

inline BatchPlan plan_batches(uint64_t seed, size_t dataset_len, size_t context_len,
                              const TrainConfig& cfg) {
  cfg.validate();
  if (context_len == 0) throw TrainError("context_len must be positive");
  const size_t train_end = static_cast<size_t>(kTrainFrac * static_cast<double>(dataset_len));
  // A window needs context_len inputs plus one lookahead token for targets.
  if (train_end < context_len + 1) throw TrainError("dataset too short for the train split");
  if (dataset_len - train_end < context_len + 1) {
    throw TrainError("dataset too short for the validation split");
  }
  const size_t train_span = train_end - context_len;             // valid starts: [0, train_span)
  const size_t val_span = dataset_len - context_len - train_end; // valid starts: train_end + [0, val_span)
  BatchPlan plan;
  plan.seed = seed;
  plan.steps = cfg.total_steps;
  plan.batch_size = cfg.batch_size;
  plan.context_len = context_len;
  Rng rng(seed);
  plan.train_offsets.resize(cfg.total_steps * cfg.batch_size);
  for (auto& off : plan.train_offsets) off = rng.next_below(train_span);
  plan.val_offsets.resize(cfg.eval_sequences);
  for (auto& off : plan.val_offsets) off = train_end + rng.next_below(val_span);
  return plan;
}

// --------------------------------------------------------------- metrics --

enum class MetricsKind : uint8_t { Train, Val };

inline std::string_view metrics_kind_name(MetricsKind k) {
  return k == MetricsKind::Train ? "train" : "val";
}

/// Metrics are stored as 32-bit floats; the CSV's 9-significant-digit
/// encoding round-trips them exactly.
struct MetricsRecord {
  uint64_t step = 0;
  MetricsKind kind = MetricsKind::Train;
  float loss = 0.0f;
  float lr = 0.0f;
  float grad_norm = 0.0f;  // pre-clip global norm; 0 on val rows
  bool diverged = false;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct MetricsLog {
  std::vector<MetricsRecord> records;
  std::vector<uint64_t> batch_hashes;  // one per executed train step; not part of the CSV

  friend bool operator==(const MetricsLog&, const MetricsLog&) = default;
};

inline constexpr std::string_view kMetricsHeader = "step,kind,loss,lr,grad_norm,diverged";

inline std::string emit_metrics_csv(const MetricsLog& log) {
  std::string out(kMetricsHeader);
  out += '\n';
  for (const auto& r : log.records) {
    out += std::to_string(r.step);
    out += ',';
    out += metrics_kind_name(r.kind);
    out += ',';
    out += format_float9(r.loss);
    out += ',';
    out += format_float9(r.lr);
    out += ',';
    out += format_float9(r.grad_norm);
    out += ',';
    out += r.diverged ? '1' : '0';
    out += '\n';
  }
  return out;
}

inline MetricsLog parse_metrics_csv(std::string_view text) {
  MetricsLog log;
  size_t pos = 0;
  size_t lineno = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    const size_t nl = text.find('\n', pos);
    std::string line(text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos));
    pos = (nl == std::string_view::npos) ? text.size() : nl + 1;
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!saw_header) {
      if (line != kMetricsHeader) throw TrainError("metrics CSV has unexpected header: " + line);
      saw_header = true;
      continue;
    }
    std::vector<std::string> fields;
    size_t f = 0;
    while (true) {
      const size_t comma = line.find(',', f);
      fields.push_back(line.substr(f, comma == std::string::npos ? std::string::npos : comma - f));
      if (comma == std::string::npos) break;
      f = comma + 1;
    }
    if (fields.size() != 6) {
      throw TrainError("metrics CSV line " + std::to_string(lineno) + " has " +
                       std::to_string(fields.size()) + " fields, expected 6");
    }
    MetricsRecord r;
    r.step = std::stoull(fields[0]);
    if (fields[1] == "train") {
      r.kind = MetricsKind::Train;
    } else if (fields[1] == "val") {
      r.kind = MetricsKind::Val;
    } else {
      throw TrainError("metrics CSV line " + std::to_string(lineno) + " has bad kind: " + fields[1]);
    }
    r.loss = std::stof(fields[2]);
    r.lr = std::stof(fields[3]);
    r.grad_norm = std::stof(fields[4]);
    if (fields[5] != "0" && fields[5] != "1") {
      throw TrainError("metrics CSV line " + std::to_string(lineno) + " has bad diverged flag");
    }
    r.diverged = fields[5] == "1";
    log.records.push_back(r);
  }
  if (!saw_header) throw TrainError("metrics CSV is empty");
  return log;
}

// --------------------------------------------------------------- batches --

struct Batch {
  std::vector<int32_t> inputs, targets;
};

inline Batch make_batch(const std::vector<int32_t>& tokens, std::span<const size_t> offsets,
                        size_t context_len) {
  Batch b;
  b.inputs.reserve(offsets.size() * context_len);
  b.targets.reserve(offsets.size() * context_len);
  for (size_t off : offsets) {
    if (off + context_len + 1 > tokens.size()) {
      throw TrainError("batch offset " + std::to_string(off) + " overruns the token stream");
    }
    b.inputs.insert(b.inputs.end(), tokens.begin() + static_cast<ptrdiff_t>(off),
                    tokens.begin() + static_cast<ptrdiff_t>(off + context_len));
    b.targets.insert(b.targets.end(), tokens.begin() + static_cast<ptrdiff_t>(off + 1),
                     tokens.begin() + static_cast<ptrdiff_t>(off + context_len + 1));
  }
  return b;
}

inline uint64_t batch_hash(const Batch& b) {
  uint64_t h = fnv1a(b.inputs.data(), b.inputs.size() * sizeof(int32_t));
  return fnv1a(b.targets.data(), b.targets.size() * sizeof(int32_t), h);
}

// ------------------------------------------------------------ evaluation --

/// Per-sequence validation losses. Each sequence is evaluated on its own
/// tape, so the values are independent of evaluation order; the estimate is
/// their mean reduced in offset-list order.
template <typename T>
std::vector<double> eval_sequence_losses(TransformerParams<T>& params,
                                         const std::vector<int32_t>& tokens,
                                         std::span<const size_t> offsets, size_t context_len) {
  std::vector<double> losses(offsets.size());
  for (size_t i = 0; i < offsets.size(); ++i) {
    const Batch one = make_batch(tokens, offsets.subspan(i, 1), context_len);
    Tape<T> tape;
    const auto loss = forward_loss(tape, params, one.inputs, one.targets, context_len);
    losses[i] = static_cast<double>(tape.value(loss).data[0]);
  }
  return losses;
}

template <typename T>
double eval_loss(TransformerParams<T>& params, const std::vector<int32_t>& tokens,
                 std::span<const size_t> offsets, size_t context_len) {
  if (offsets.empty()) throw TrainError("validation offset list is empty");
  const auto losses = eval_sequence_losses(params, tokens, offsets, context_len);
  double sum = 0.0;
  for (double l : losses) sum += l;
  return sum / static_cast<double>(losses.size());
}

// ------------------------------------------------------------- training --

inline constexpr double kBlowupFactor = 3.0;
inline constexpr size_t kBlowupPatience = 100;

struct TrainResult {
  MetricsLog log;
  bool diverged = false;
  uint64_t halted_step = 0;  // step at which divergence stopped the run; 0 if it completed
};

/// Run the full protocol: per step, assemble the planned batch, accumulate
/// gradients over micro_steps chunks, clip, and apply AdamW at the scheduled
/// learning rate; evaluate every eval_interval steps. Divergence (non-finite
/// loss or gradients, or loss above kBlowupFactor x the first step's loss for
/// kBlowupPatience consecutive steps) halts the run with the log preserved.
template <typename T>
TrainResult train(TransformerParams<T>& params, const TrainConfig& cfg, const BatchPlan& plan,
                  const std::vector<int32_t>& tokens) {
  cfg.validate();
  params.config.validate();
  if (plan.steps != cfg.total_steps || plan.batch_size != cfg.batch_size) {
    throw TrainError("batch plan does not match the train config");
  }
  if (plan.context_len > params.config.context_len) {
    throw TrainError("plan context_len exceeds the model's context window");
  }
  const std::vector<Parameter<T>*> plist = params.all();
  AdamWState<T> state;
  state.bind(plist);

  TrainResult out;
  const size_t micro = cfg.micro_steps;
  const size_t chunk = cfg.batch_size / micro;
  const size_t chunk_tokens = chunk * plan.context_len;
  double initial_loss = 0.0;
  size_t blowup_run = 0;

  for (uint64_t s = 1; s <= cfg.total_steps; ++s) {
    const Batch batch = make_batch(tokens, plan.step_offsets(s - 1), plan.context_len);
    out.log.batch_hashes.push_back(batch_hash(batch));

    zero_grads<T>(plist);
    double step_loss = 0.0;
    for (size_t c = 0; c < micro; ++c) {
      const std::vector<int32_t> in(batch.inputs.begin() + static_cast<ptrdiff_t>(c * chunk_tokens),
                                    batch.inputs.begin() + static_cast<ptrdiff_t>((c + 1) * chunk_tokens));
      const std::vector<int32_t> tg(batch.targets.begin() + static_cast<ptrdiff_t>(c * chunk_tokens),
                                    batch.targets.begin() + static_cast<ptrdiff_t>((c + 1) * chunk_tokens));
      Tape<T> tape;
      auto loss = forward_loss(tape, params, in, tg, plan.context_len);
      if (micro > 1) loss = tape.scale(loss, T(1) / static_cast<T>(micro));
      tape.backward(loss);
      step_loss += static_cast<double>(tape.value(loss).data[0]);
    }

    const double lr = lr_schedule(s, cfg);
    const AdamWResult<T> res = adamw_step<T>(plist, state, static_cast<T>(lr),
                                             static_cast<T>(cfg.weight_decay),
                                             static_cast<T>(cfg.grad_clip));

    bool diverged_now = res.diverged || !std::isfinite(step_loss);
    if (s == 1) initial_loss = step_loss;
    if (std::isfinite(step_loss) && step_loss > kBlowupFactor * initial_loss) {
      if (++blowup_run >= kBlowupPatience) diverged_now = true;
    } else {
      blowup_run = 0;
    }

    out.log.records.push_back({s, MetricsKind::Train, static_cast<float>(step_loss),
                               static_cast<float>(lr), static_cast<float>(res.grad_norm),
                               diverged_now});
    if (diverged_now) {
      out.diverged = true;
      out.halted_step = s;
      break;
    }
    if (s % cfg.eval_interval == 0 && !plan.val_offsets.empty()) {
      const double v = eval_loss(params, tokens, plan.val_offsets, plan.context_len);
      out.log.records.push_back(
          {s, MetricsKind::Val, static_cast<float>(v), static_cast<float>(lr), 0.0f, false});
    }
  }
  return out;
}

/// First step at which the divergence rule fires on a finished log: a
/// non-finite train loss, or the start of the first window of
/// kBlowupPatience consecutive steps above kBlowupFactor x the initial loss.
inline std::optional<uint64_t> detect_divergence(const MetricsLog& log) {
  bool have_initial = false;
  double initial = 0.0;
  size_t run = 0;
  uint64_t run_start = 0;
  for (const auto& r : log.records) {
    if (r.kind != MetricsKind::Train) continue;
    if (!std::isfinite(r.loss)) return r.step;
    if (!have_initial) {
      initial = static_cast<double>(r.loss);
      have_initial = true;
    }
    if (static_cast<double>(r.loss) > kBlowupFactor * initial) {
      if (run == 0) run_start = r.step;
      if (++run >= kBlowupPatience) return run_start;
    } else {
      run = 0;
    }
  }
  return std::nullopt;
}

// ------------------------------------------------------------ comparison --

struct NamedLog {
  std::string name;
  const MetricsLog* log = nullptr;
};

/// Relative improvement of each run over the baseline at every shared
/// evaluation step (fractions; positive = variant is better).
struct CompareTable {
  std::vector<uint64_t> steps;
  std::vector<std::string> runs;                  // baseline excluded
  std::vector<std::vector<double>> improvement;   // [run][step index]
};

inline std::vector<std::pair<uint64_t, double>> val_series(const MetricsLog& log) {
  std::vector<std::pair<uint64_t, double>> out;
  for (const auto& r : log.records) {
    if (r.kind == MetricsKind::Val) out.emplace_back(r.step, static_cast<double>(r.loss));
  }
  return out;
}

inline CompareTable compare_runs(const std::vector<NamedLog>& runs, size_t baseline_index) {
  if (runs.size() < 2) throw TrainError("comparison needs at least two runs");
  if (baseline_index >= runs.size()) throw TrainError("baseline index out of range");
  const auto base = val_series(*runs[baseline_index].log);
  if (base.empty()) throw TrainError("baseline has no validation records");
  CompareTable table;
  for (const auto& [step, loss] : base) table.steps.push_back(step);
  for (size_t i = 0; i < runs.size(); ++i) {
    if (i == baseline_index) continue;
    const auto series = val_series(*runs[i].log);
    if (series.size() != base.size()) {
      throw TrainError("run " + runs[i].name + " has a mismatched evaluation grid");
    }
    std::vector<double> imp(series.size());
    for (size_t j = 0; j < series.size(); ++j) {
      if (series[j].first != base[j].first) {
        throw TrainError("run " + runs[i].name + " has a mismatched evaluation grid");
      }
      imp[j] = relative_improvement(base[j].second, series[j].second);
    }
    table.runs.push_back(runs[i].name);
    table.improvement.push_back(std::move(imp));
  }
  return table;
}

inline std::string emit_compare_csv(const CompareTable& table) {
  std::string out = "step";
  for (const auto& name : table.runs) {
    out += ',';
    out += name;
  }
  out += '\n';
  for (size_t j = 0; j < table.steps.size(); ++j) {
    out += std::to_string(table.steps[j]);
    for (size_t i = 0; i < table.runs.size(); ++i) {
      out += ',';
      out += format_float9(static_cast<float>(table.improvement[i][j]));
    }
    out += '\n';
  }
  return out;
}

}  // namespace resq
