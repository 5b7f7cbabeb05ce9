// resq: command-line front end for the residual-query laboratory.
//
// Subcommands: train, verify, gradcheck, params, compare, corpus.
// Exit codes: 0 success, 1 usage error, 2 verification failure, 3 divergence.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "resq/resq.hpp"

namespace fs = std::filesystem;
using namespace resq;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerifyFail = 2;
constexpr int kExitDiverged = 3;

std::string default_out_dir() {
  const char* env = std::getenv("RESQ_OUT_DIR");
  return env && *env ? env : "out";
}

struct TrainArgs {
  // model
  size_t n_layer = 4, n_head = 4, d_model = 64, context_len = 128;
  double mlp_mult = 4.0;
  std::string mode = "linear";
  double query_scale = 0.5;
  // data
  std::string corpus_path;
  uint64_t corpus_seed = 7;
  size_t corpus_bytes = 1'100'000;
  std::string tokenizer = "char";
  // schedule
  TrainConfig tc{.max_lr = 6e-4,
                 .min_lr = 6e-5,
                 .warmup_steps = 200,
                 .total_steps = 2000,
                 .weight_decay = 0.1,
                 .grad_clip = 1.0,
                 .eval_interval = 250,
                 .eval_sequences = 32,
                 .batch_size = 8,
                 .micro_steps = 1,
                 .seed = 1};
  uint64_t plan_seed = 42;
  // output
  std::string out_dir = default_out_dir();
  std::string run_id = "run";
};

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
  cmd->set_config("--config")->description("flat key = value config file");
  cmd->add_option("--layers", a.n_layer, "transformer blocks");
  cmd->add_option("--heads", a.n_head, "attention heads");
  cmd->add_option("--d-model", a.d_model, "model width");
  cmd->add_option("--ctx", a.context_len, "context length");
  cmd->add_option("--mlp-mult", a.mlp_mult, "MLP hidden multiple of d_model");
  cmd->add_option("--mode", a.mode, "query mode: linear | identity | residual-gelu");
  cmd->add_option("--query-scale", a.query_scale, "scale on (X + f(X))");
  cmd->add_option("--corpus", a.corpus_path, "corpus file (omit to generate synthetic text)");
  cmd->add_option("--corpus-seed", a.corpus_seed, "seed for the synthetic corpus");
  cmd->add_option("--corpus-bytes", a.corpus_bytes, "minimum synthetic corpus size");
  cmd->add_option("--tokenizer", a.tokenizer, "byte | char");
  cmd->add_option("--steps", a.tc.total_steps, "optimizer steps");
  cmd->add_option("--batch", a.tc.batch_size, "sequences per step");
  cmd->add_option("--micro-steps", a.tc.micro_steps, "gradient-accumulation chunks per step");
  cmd->add_option("--max-lr", a.tc.max_lr, "peak learning rate");
  cmd->add_option("--min-lr", a.tc.min_lr, "final learning rate");
  cmd->add_option("--warmup", a.tc.warmup_steps, "linear warmup steps");
  cmd->add_option("--wd", a.tc.weight_decay, "decoupled weight decay");
  cmd->add_option("--clip", a.tc.grad_clip, "global gradient-norm clip");
  cmd->add_option("--eval-interval", a.tc.eval_interval, "steps between validation estimates");
  cmd->add_option("--eval-seq", a.tc.eval_sequences, "validation sequences per estimate");
  cmd->add_option("--seed", a.tc.seed, "parameter-init seed");
  cmd->add_option("--plan-seed", a.plan_seed, "batch-plan seed");
  cmd->add_option("--out", a.out_dir, "output directory (default $RESQ_OUT_DIR or ./out)");
  cmd->add_option("--run-id", a.run_id, "artifact name stem");
}

int run_train(const TrainArgs& a) {
  ModelConfig mc;
  mc.n_layer = a.n_layer;
  mc.n_head = a.n_head;
  mc.d_model = a.d_model;
  mc.context_len = a.context_len;
  mc.mlp_mult = a.mlp_mult;
  mc.query_mode = parse_query_mode(a.mode);
  mc.query_scale = a.query_scale;

  std::string corpus_desc;
  std::string text;
  if (!a.corpus_path.empty()) {
    text = read_file(a.corpus_path);
    corpus_desc = "file:" + a.corpus_path;
  } else {
    text = generate_corpus(a.corpus_seed, a.corpus_bytes);
    corpus_desc = "generated:seed=" + std::to_string(a.corpus_seed) +
                  ",min_bytes=" + std::to_string(a.corpus_bytes);
  }
  TokenizerKind tk;
  if (a.tokenizer == "byte") {
    tk = TokenizerKind::Byte;
  } else if (a.tokenizer == "char") {
    tk = TokenizerKind::Char;
  } else {
    throw TrainError("unknown tokenizer '" + a.tokenizer + "' (expected byte or char)");
  }
  const Tokenized data = tokenize_corpus(text, tk);
  mc.vocab_size = data.vocab_size();
  mc.validate();

  const BatchPlan plan = plan_batches(a.plan_seed, data.tokens.size(), mc.context_len, a.tc);
  TransformerParams<float> params = init_params<float>(mc, a.tc.seed);
  const ParamCounts counts = count_params(mc);
  std::printf("model: %s, %zu layers, d=%zu, %zu heads, vocab %zu, %zu non-emb params\n",
              query_mode_name(mc.query_mode), mc.n_layer, mc.d_model, mc.n_head, mc.vocab_size,
              counts.non_embedding);

  const TrainResult result = train(params, a.tc, plan, data.tokens);

  const fs::path dir(a.out_dir);
  const std::string ckpt_name = a.run_id + ".ckpt";
  const std::string csv_name = a.run_id + ".metrics.csv";
  const std::string svg_name = a.run_id + ".loss.svg";
  const std::string manifest_name = a.run_id + ".manifest";
  atomic_write_file(dir / csv_name, emit_metrics_csv(result.log));
  save_checkpoint(dir / ckpt_name, params);

  Series train_s{"train", {}, {}};
  Series val_s{"val", {}, {}};
  std::vector<double> train_losses;
  for (const auto& r : result.log.records) {
    auto& s = r.kind == MetricsKind::Train ? train_s : val_s;
    s.x.push_back(static_cast<double>(r.step));
    s.y.push_back(static_cast<double>(r.loss));
    if (r.kind == MetricsKind::Train) train_losses.push_back(static_cast<double>(r.loss));
  }
  if (!train_s.x.empty()) {
    std::vector<Series> series{train_s};
    if (!val_s.x.empty()) series.push_back(val_s);
    atomic_write_file(dir / svg_name,
                      render_line_chart(series, "loss: " + a.run_id, "step", "cross-entropy"));
  }

  KvPairs manifest{{"run_id", a.run_id}};
  for (auto& [k, v] : config_to_kv(mc)) manifest.emplace_back("model." + k, v);
  manifest.emplace_back("train.max_lr", format_double(a.tc.max_lr));
  manifest.emplace_back("train.min_lr", format_double(a.tc.min_lr));
  manifest.emplace_back("train.warmup_steps", std::to_string(a.tc.warmup_steps));
  manifest.emplace_back("train.total_steps", std::to_string(a.tc.total_steps));
  manifest.emplace_back("train.weight_decay", format_double(a.tc.weight_decay));
  manifest.emplace_back("train.grad_clip", format_double(a.tc.grad_clip));
  manifest.emplace_back("train.eval_interval", std::to_string(a.tc.eval_interval));
  manifest.emplace_back("train.eval_sequences", std::to_string(a.tc.eval_sequences));
  manifest.emplace_back("train.batch_size", std::to_string(a.tc.batch_size));
  manifest.emplace_back("train.micro_steps", std::to_string(a.tc.micro_steps));
  manifest.emplace_back("train.seed", std::to_string(a.tc.seed));
  manifest.emplace_back("plan_seed", std::to_string(a.plan_seed));
  manifest.emplace_back("corpus", corpus_desc);
  manifest.emplace_back("tokenizer", a.tokenizer);
  manifest.emplace_back("artifacts.checkpoint", ckpt_name);
  manifest.emplace_back("artifacts.metrics", csv_name);
  manifest.emplace_back("artifacts.plot", svg_name);
  manifest.emplace_back("result.diverged", result.diverged ? "1" : "0");
  manifest.emplace_back("result.steps_run", std::to_string(result.log.batch_hashes.size()));
  atomic_write_file(dir / manifest_name, emit_kv(manifest));

  if (!train_losses.empty()) {
    std::printf("loss  %s\n", ascii_sparkline(train_losses).c_str());
    std::printf("final train loss %.4f", train_losses.back());
    if (!val_s.y.empty()) std::printf(", final val loss %.4f", val_s.y.back());
    std::printf("\n");
  }
  std::printf("artifacts in %s: %s %s %s %s\n", dir.string().c_str(), manifest_name.c_str(),
              csv_name.c_str(), ckpt_name.c_str(), svg_name.c_str());
  if (result.diverged) {
    std::printf("DIVERGED at step %llu\n", static_cast<unsigned long long>(result.halted_step));
    return kExitDiverged;
  }
  return kExitOk;
}

struct VerifyArgs {
  uint64_t seed = 2024;
  size_t trials = 100;
  size_t d = 16, heads = 4, n = 8;
};

int run_verify(const VerifyArgs& a) {
  bool ok = true;
  auto line = [&](const char* name, bool pass, const std::string& detail) {
    std::printf("%-22s %s  %s\n", name, pass ? "ok  " : "FAIL", detail.c_str());
    ok = ok && pass;
  };
  char buf[160];

  const auto rep = reparametrization_suite(a.seed, a.trials, a.d, a.heads, a.n);
  std::snprintf(buf, sizeof(buf), "max deviation %.3e over %zu trials (bound 1e-08)",
                rep.max_deviation, rep.trials);
  line("reparametrization", rep.max_deviation <= 1e-8, buf);

  const auto abs_rep = absorption_suite(a.seed + 1, a.trials, a.d, a.heads, a.n);
  std::snprintf(buf, sizeof(buf), "W_Q %s identity, max deviation %.3e (bound 1e-08)",
                abs_rep.identity_exact ? "exactly" : "NOT", abs_rep.max_deviation);
  line("absorption", abs_rep.identity_exact && abs_rep.max_deviation <= 1e-8, buf);

  {
    Rng rng(a.seed + 2);
    auto w = random_attention_weights<double>(rng, a.d, a.heads, QueryMode::Linear);
    Tensor<double> x({a.n, a.d});
    for (auto& v : x.data) v = rng.next_gaussian();
    w.w_q = w.w_k;
    const auto tied = logits_symmetry_check(x, w);
    auto w2 = random_attention_weights<double>(rng, a.d, a.heads, QueryMode::Linear);
    const auto untied = logits_symmetry_check(x, w2);
    std::snprintf(buf, sizeof(buf),
                  "tied W_Q=W_K asymmetry %.3e, independent asymmetry %.3e",
                  tied.max_asymmetry, untied.max_asymmetry);
    line("logit symmetry", tied.is_symmetric && !untied.is_symmetric, buf);
  }

  const auto esc = escape_suite(a.seed + 3, a.trials, a.d, a.heads, a.n);
  const size_t need = (a.trials * 95 + 99) / 100;
  const size_t got = esc.count_above(1e-3);
  std::snprintf(buf, sizeof(buf), "%zu/%zu trials deviate > 1e-03 (need %zu), max %.3e", got,
                esc.trials, need, esc.max_deviation);
  line("nonlinear escape", got >= need, buf);

  if (!ok) {
    const auto& worst = rep.max_deviation >= abs_rep.max_deviation ? rep : abs_rep;
    std::printf("worst linear-suite trial: #%zu deviation %.6e\n", worst.worst_trial,
                worst.max_deviation);
  }
  return ok ? kExitOk : kExitVerifyFail;
}

struct GradcheckArgs {
  uint64_t seed = 99;
};

/// Check one tape op whose inputs are parameters; returns max relative error.
template <typename BuildLoss>
double check_primitive(const char* name, std::vector<Parameter<double>*> params,
                       BuildLoss build_loss, bool& ok, double bound = 1e-6) {
  std::function<double(bool)> loss_fn = [&](bool with_grad) {
    Tape<double> tape;
    const auto loss = build_loss(tape);
    if (with_grad) tape.backward(loss);
    return tape.value(loss).data[0];
  };
  const auto rep = grad_check<double>(loss_fn, params, 1e-5);
  const bool pass = rep.max_rel_err <= bound;
  std::printf("  %-18s %s  max rel err %.3e over %zu coords\n", name, pass ? "ok  " : "FAIL",
              rep.max_rel_err, rep.coords_checked);
  ok = ok && pass;
  return rep.max_rel_err;
}

int run_gradcheck(const GradcheckArgs& a) {
  bool ok = true;
  Rng rng(a.seed);
  auto make_param = [&](const std::string& name, Shape shape, double std_dev = 0.8) {
    Parameter<double> p;
    p.name = name;
    p.tensor = Tensor<double>(std::move(shape));
    for (auto& v : p.tensor.data) v = rng.next_gaussian() * std_dev;
    return p;
  };

  std::printf("primitives (64-bit, central differences, bound 1e-06):\n");
  {
    auto x = make_param("x", {3, 4});
    auto y = make_param("y", {3, 4});
    check_primitive("add+mul", {&x, &y}, [&](Tape<double>& t) {
      return t.sum(t.mul(t.add(t.param(x), t.param(y)), t.param(y)));
    }, ok);
  }
  {
    auto x = make_param("x", {3, 4});
    check_primitive("scale", {&x}, [&](Tape<double>& t) {
      return t.sum(t.scale(t.param(x), -1.7));
    }, ok);
  }
  {
    auto x = make_param("x", {3, 4});
    auto y = make_param("y", {4, 5});
    check_primitive("matmul", {&x, &y}, [&](Tape<double>& t) {
      return t.sum(t.matmul(t.param(x), t.param(y)));
    }, ok);
  }
  {
    auto x = make_param("x", {3, 4});
    auto y = make_param("y", {5, 4});
    check_primitive("matmul_nt", {&x, &y}, [&](Tape<double>& t) {
      return t.sum(t.matmul_nt(t.param(x), t.param(y)));
    }, ok);
  }
  {
    auto x = make_param("x", {4, 6});
    check_primitive("gelu", {&x}, [&](Tape<double>& t) {
      return t.sum(t.gelu(t.param(x)));
    }, ok);
  }
  {
    auto x = make_param("x", {4, 6});
    auto g = make_param("g", {6}, 0.3);
    for (auto& v : g.tensor.data) v += 1.0;
    check_primitive("layer_norm", {&x, &g}, [&](Tape<double>& t) {
      return t.sum(t.mul(t.layer_norm(t.param(x), t.param(g), 1e-5),
                         t.constant(Tensor<double>::full({4, 6}, 0.5))));
    }, ok);
  }
  {
    auto x = make_param("x", {4, 6});
    auto g = make_param("g", {6}, 0.3);
    for (auto& v : g.tensor.data) v += 1.0;
    check_primitive("rms_norm", {&x, &g}, [&](Tape<double>& t) {
      return t.sum(t.mul(t.rms_norm(t.param(x), t.param(g), 1e-5),
                         t.constant(Tensor<double>::full({4, 6}, 0.5))));
    }, ok);
  }
  {
    auto x = make_param("x", {5, 7});
    check_primitive("softmax_rows", {&x}, [&](Tape<double>& t) {
      Tensor<double> mask({5, 7});
      Rng mr(12);
      for (auto& v : mask.data) v = mr.next_gaussian();
      return t.sum(t.mul(t.softmax_rows(t.param(x)), t.constant(std::move(mask))));
    }, ok);
  }
  {
    auto x = make_param("logits", {6, 9});
    check_primitive("cross_entropy", {&x}, [&](Tape<double>& t) {
      return t.cross_entropy(t.param(x), {0, 3, 8, 2, 2, 5});
    }, ok);
  }
  {
    auto q = make_param("q", {6, 8}, 0.5);
    auto k = make_param("k", {6, 8}, 0.5);
    auto v = make_param("v", {6, 8}, 0.5);
    check_primitive("causal_attention", {&q, &k, &v}, [&](Tape<double>& t) {
      Tensor<double> mask({6, 8});
      Rng mr(13);
      for (auto& vv : mask.data) vv = mr.next_gaussian();
      return t.sum(t.mul(t.causal_attention(t.param(q), t.param(k), t.param(v), 2, 3), // two sequences of three
                         t.constant(std::move(mask))));
    }, ok);
  }
  {
    auto tok = make_param("tok_emb", {7, 4}, 0.5);
    auto pos = make_param("pos_emb", {3, 4}, 0.5);
    check_primitive("embed", {&tok, &pos}, [&](Tape<double>& t) {
      Tensor<double> mask({6, 4});
      Rng mr(14);
      for (auto& vv : mask.data) vv = mr.next_gaussian();
      return t.sum(t.mul(t.embed(t.param(tok), t.param(pos), {1, 6, 0, 2, 2, 5}, 3),
                         t.constant(std::move(mask))));
    }, ok);
  }

  std::printf("full model (d=8, 2 layers, n=4, V=11, 64-bit, bound 1e-04):\n");
  for (QueryMode mode : {QueryMode::Linear, QueryMode::Identity, QueryMode::ResidualGelu}) {
    ModelConfig mc;
    mc.n_layer = 2;
    mc.n_head = 2;
    mc.d_model = 8;
    mc.context_len = 4;
    mc.vocab_size = 11;
    mc.query_mode = mode;
    auto params = init_params<double>(mc, a.seed);
    // fatter weights than the training init so the check isn't near-linear
    for (auto* p : params.all()) {
      if (p->decay) {
        for (auto& v : p->tensor.data) v *= 20.0;
      }
    }
    const std::vector<int32_t> tokens{3, 1, 4, 1, 5, 9, 2, 6};   // two sequences
    const std::vector<int32_t> targets{1, 4, 1, 5, 9, 2, 6, 10};
    std::function<double(bool)> loss_fn = [&](bool with_grad) {
      Tape<double> tape;
      const auto loss = forward_loss(tape, params, tokens, targets, 4);
      if (with_grad) tape.backward(loss);
      return tape.value(loss).data[0];
    };
    std::printf(" mode %s:\n", query_mode_name(mode));
    double worst = 0.0;
    for (auto* p : params.all()) {
      std::vector<Parameter<double>*> one{p};
      const auto rep = grad_check<double>(loss_fn, one, 1e-5, 24, a.seed ^ p->tensor.numel());
      const bool pass = rep.max_rel_err <= 1e-4;
      std::printf("  %-22s %s  max rel err %.3e\n", p->name.c_str(), pass ? "ok  " : "FAIL",
                  rep.max_rel_err);
      ok = ok && pass;
      worst = std::max(worst, rep.max_rel_err);
    }
    std::printf("  -> worst %.3e\n", worst);
  }
  return ok ? kExitOk : kExitVerifyFail;
}

struct ParamsArgs {
  size_t n_layer = 12, n_head = 12, d_model = 768, context_len = 1024, vocab = 50257;
  double mlp_mult = 4.0;
  std::string mode = "linear";
  std::string preset;  // baseline | residual-gelu | mlp475
};

int run_params(const ParamsArgs& a) {
  ModelConfig mc;
  mc.n_layer = a.n_layer;
  mc.n_head = a.n_head;
  mc.d_model = a.d_model;
  mc.context_len = a.context_len;
  mc.vocab_size = a.vocab;
  mc.mlp_mult = a.mlp_mult;
  mc.query_mode = parse_query_mode(a.mode);
  if (!a.preset.empty()) {
    mc = ModelConfig{.n_layer = 12, .n_head = 12, .d_model = 768, .mlp_mult = 4.0,
                     .context_len = 1024, .vocab_size = 50257};
    if (a.preset == "baseline") {
      mc.query_mode = QueryMode::Linear;
    } else if (a.preset == "residual-gelu") {
      mc.query_mode = QueryMode::ResidualGelu;
    } else if (a.preset == "mlp475") {
      mc.query_mode = QueryMode::Linear;
      mc.mlp_mult = 4.75;
    } else {
      throw std::invalid_argument("unknown preset '" + a.preset +
                                  "' (expected baseline, residual-gelu, or mlp475)");
    }
  }
  const ParamCounts c = count_params(mc);
  std::printf("config: %zuL, d=%zu, %zu heads, mlp x%.2f, %s queries\n", mc.n_layer, mc.d_model,
              mc.n_head, mc.mlp_mult, query_mode_name(mc.query_mode));
  std::printf("  %-16s %15zu\n", "embedding", c.embedding);
  std::printf("  %-16s %15zu\n", "attention", c.attention);
  std::printf("  %-16s %15zu\n", "query-residual", c.query_residual);
  std::printf("  %-16s %15zu\n", "mlp", c.mlp);
  std::printf("  %-16s %15zu\n", "norms", c.norms);
  std::printf("  %-16s %15zu\n", "non-embedding", c.non_embedding);
  std::printf("  %-16s %15zu\n", "total", c.total);
  if (!a.preset.empty()) {
    ModelConfig base = mc;
    base.query_mode = QueryMode::Linear;
    base.mlp_mult = 4.0;
    const ParamCounts cb = count_params(base);
    const double pct = 100.0 * (static_cast<double>(c.non_embedding) /
                                    static_cast<double>(cb.non_embedding) - 1.0);
    std::printf("  vs baseline (84,953,856 non-emb): %+0.4f%%\n", pct);
  }
  return kExitOk;
}

struct CompareArgs {
  std::vector<std::string> inputs;  // name=metrics.csv
  std::string baseline;
  std::string out_dir = default_out_dir();
  std::string id = "compare";
};

int run_compare(const CompareArgs& a) {
  std::vector<std::pair<std::string, MetricsLog>> loaded;
  for (const auto& spec : a.inputs) {
    const size_t eq = spec.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("input '" + spec + "' is not name=path");
    }
    loaded.emplace_back(spec.substr(0, eq), parse_metrics_csv(read_file(spec.substr(eq + 1))));
  }
  std::vector<NamedLog> runs;
  size_t baseline_index = SIZE_MAX;
  for (size_t i = 0; i < loaded.size(); ++i) {
    runs.push_back({loaded[i].first, &loaded[i].second});
    if (loaded[i].first == a.baseline) baseline_index = i;
  }
  if (baseline_index == SIZE_MAX) {
    throw std::invalid_argument("baseline '" + a.baseline + "' is not among the inputs");
  }
  const CompareTable table = compare_runs(runs, baseline_index);

  const fs::path dir(a.out_dir);
  atomic_write_file(dir / (a.id + ".csv"), emit_compare_csv(table));
  std::vector<Series> series;
  for (size_t i = 0; i < table.runs.size(); ++i) {
    Series s{table.runs[i], {}, {}};
    for (size_t j = 0; j < table.steps.size(); ++j) {
      s.x.push_back(static_cast<double>(table.steps[j]));
      s.y.push_back(100.0 * table.improvement[i][j]);
    }
    series.push_back(std::move(s));
  }
  atomic_write_file(dir / (a.id + ".svg"),
                    render_line_chart(series, "relative improvement vs " + a.baseline, "step",
                                      "improvement (%)"));
  std::printf("%-8s", "step");
  for (const auto& r : table.runs) std::printf(" %14s", r.c_str());
  std::printf("\n");
  for (size_t j = 0; j < table.steps.size(); ++j) {
    std::printf("%-8llu", static_cast<unsigned long long>(table.steps[j]));
    for (size_t i = 0; i < table.runs.size(); ++i) {
      std::printf(" %+13.4f%%", 100.0 * table.improvement[i][j]);
    }
    std::printf("\n");
  }
  std::printf("wrote %s and %s in %s\n", (a.id + ".csv").c_str(), (a.id + ".svg").c_str(),
              a.out_dir.c_str());
  return kExitOk;
}

struct CorpusArgs {
  uint64_t seed = 7;
  size_t bytes = 1'100'000;
  std::string out;
};

int run_corpus(const CorpusArgs& a) {
  const std::string text = generate_corpus(a.seed, a.bytes);
  const Tokenized by_char = tokenize_corpus(text, TokenizerKind::Char);
  std::printf("generated %zu bytes, %zu distinct characters\n", text.size(),
              by_char.vocab_size());
  std::printf("unigram entropy: %.6f nats (char vocab)\n",
              unigram_entropy(by_char.tokens, by_char.vocab_size()));
  if (!a.out.empty()) {
    atomic_write_file(a.out, text);
    std::printf("wrote %s\n", a.out.c_str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"resq — residual query projection laboratory"};
  app.require_subcommand(1);

  TrainArgs train_args;
  VerifyArgs verify_args;
  GradcheckArgs gradcheck_args;
  ParamsArgs params_args;
  CompareArgs compare_args;
  CorpusArgs corpus_args;

  auto* cmd_train = app.add_subcommand("train", "train a model under the deterministic protocol");
  add_train_flags(cmd_train, train_args);

  auto* cmd_verify = app.add_subcommand("verify", "run the algebraic verification suites");
  cmd_verify->add_option("--seed", verify_args.seed, "trial seed");
  cmd_verify->add_option("--trials", verify_args.trials, "trials per suite");
  cmd_verify->add_option("--d", verify_args.d, "model width");
  cmd_verify->add_option("--heads", verify_args.heads, "attention heads");
  cmd_verify->add_option("--n", verify_args.n, "sequence length");

  auto* cmd_gradcheck =
      app.add_subcommand("gradcheck", "finite-difference checks for every op and the full model");
  cmd_gradcheck->add_option("--seed", gradcheck_args.seed, "draw seed");

  auto* cmd_params = app.add_subcommand("params", "parameter accounting");
  cmd_params->add_option("--layers", params_args.n_layer, "transformer blocks");
  cmd_params->add_option("--heads", params_args.n_head, "attention heads");
  cmd_params->add_option("--d-model", params_args.d_model, "model width");
  cmd_params->add_option("--ctx", params_args.context_len, "context length");
  cmd_params->add_option("--vocab", params_args.vocab, "vocabulary size");
  cmd_params->add_option("--mlp-mult", params_args.mlp_mult, "MLP hidden multiple");
  cmd_params->add_option("--mode", params_args.mode, "query mode");
  cmd_params->add_option("--preset", params_args.preset,
                         "preset: baseline | residual-gelu | mlp475");

  auto* cmd_compare = app.add_subcommand("compare", "relative improvement across metrics CSVs");
  cmd_compare->add_option("inputs", compare_args.inputs, "runs as name=metrics.csv")->required();
  cmd_compare->add_option("--baseline", compare_args.baseline, "baseline run name")->required();
  cmd_compare->add_option("--out", compare_args.out_dir, "output directory");
  cmd_compare->add_option("--id", compare_args.id, "artifact name stem");

  auto* cmd_corpus = app.add_subcommand("corpus", "generate the synthetic corpus");
  cmd_corpus->add_option("--seed", corpus_args.seed, "generator seed");
  cmd_corpus->add_option("--bytes", corpus_args.bytes, "minimum size");
  cmd_corpus->add_option("--out", corpus_args.out, "write the text here");

  try {
    app.parse(argc, argv);
    if (cmd_train->parsed()) return run_train(train_args);
    if (cmd_verify->parsed()) return run_verify(verify_args);
    if (cmd_gradcheck->parsed()) return run_gradcheck(gradcheck_args);
    if (cmd_params->parsed()) return run_params(params_args);
    if (cmd_compare->parsed()) return run_compare(compare_args);
    if (cmd_corpus->parsed()) return run_corpus(corpus_args);
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
}
