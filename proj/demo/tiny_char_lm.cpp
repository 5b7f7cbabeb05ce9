// Train a tiny character model on the synthetic corpus for a few hundred
// steps, then sample greedily from it. A smoke demo, not a benchmark.

#include <cstdio>
#include <string>
#include <vector>

#include "resq/resq.hpp"

using namespace resq;

namespace {

std::string sample_greedy(TransformerParams<float>& params, const Tokenized& data,
                          std::vector<int32_t> prompt, size_t count) {
  std::vector<int32_t> seq = prompt;
  for (size_t i = 0; i < count; ++i) {
    const size_t n = std::min(seq.size(), params.config.context_len);
    const std::vector<int32_t> window(seq.end() - static_cast<ptrdiff_t>(n), seq.end());
    const Tensor<float> logits = forward(params, window, n);
    const size_t last = n - 1;
    int32_t best = 0;
    float best_v = logits.at(last, 0);
    for (size_t v = 1; v < logits.cols(); ++v) {
      if (logits.at(last, v) > best_v) {
        best_v = logits.at(last, v);
        best = static_cast<int32_t>(v);
      }
    }
    seq.push_back(best);
  }
  return detokenize(data, std::span<const int32_t>(seq).subspan(prompt.size()));
}

}  // namespace

int main() {
  const std::string text = generate_corpus(7, 200'000);
  const Tokenized data = tokenize_corpus(text, TokenizerKind::Char);

  ModelConfig mc;
  mc.n_layer = 2;
  mc.n_head = 4;
  mc.d_model = 48;
  mc.context_len = 64;
  mc.vocab_size = data.vocab_size();
  mc.query_mode = QueryMode::ResidualGelu;

  TrainConfig tc;
  tc.max_lr = 3e-3;
  tc.min_lr = 3e-4;
  tc.warmup_steps = 40;
  tc.total_steps = 400;
  tc.weight_decay = 0.03125;
  tc.eval_interval = 100;
  tc.eval_sequences = 8;
  tc.batch_size = 4;
  tc.seed = 11;

  std::printf("corpus: %zu chars, vocab %zu, unigram entropy %.3f nats\n", text.size(),
              data.vocab_size(), unigram_entropy(data.tokens, data.vocab_size()));

  const BatchPlan plan = plan_batches(99, data.tokens.size(), mc.context_len, tc);
  TransformerParams<float> params = init_params<float>(mc, tc.seed);
  const TrainResult result = train(params, tc, plan, data.tokens);

  std::vector<double> losses;
  for (const auto& r : result.log.records) {
    if (r.kind == MetricsKind::Train) losses.push_back(r.loss);
  }
  std::printf("loss  %s\n", ascii_sparkline(losses).c_str());
  std::printf("train loss %.3f -> %.3f over %zu steps%s\n", losses.front(), losses.back(),
              losses.size(), result.diverged ? " (DIVERGED)" : "");

  const std::string prompt = "the ";
  std::vector<int32_t> prompt_tokens;  // prompt mapped through the corpus alphabet
  for (char c : prompt) {
    for (size_t i = 0; i < data.alphabet.size(); ++i) {
      if (static_cast<char>(data.alphabet[i]) == c) {
        prompt_tokens.push_back(static_cast<int32_t>(i));
        break;
      }
    }
  }
  std::printf("greedy sample after prompt %-6s: \"%s\"\n", ("\"" + prompt + "\"").c_str(),
              sample_greedy(params, data, prompt_tokens, 120).c_str());
  return 0;
}
