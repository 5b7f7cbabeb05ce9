#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "resq/rng.hpp"

namespace resq {

// Deterministic synthetic prose: short template sentences over a small
// lexicon. The text has strong local structure (a character model learns it
// quickly) while its unigram statistics stay boring, which is exactly what
// the training smoke tests need.

namespace corpus_detail {

inline constexpr std::array<std::string_view, 2> kDet = {"the", "a"};
inline constexpr std::array<std::string_view, 10> kAdj = {
    "red", "old", "tiny", "warm", "cold", "dark", "pale", "loud", "soft", "thin"};
inline constexpr std::array<std::string_view, 16> kNoun = {
    "fox",   "owl",  "cat",  "dog",  "bird", "fish",  "tree",  "stone",
    "river", "cloud", "moon", "star", "wind", "leaf", "snake", "mouse"};
inline constexpr std::array<std::string_view, 12> kVerb = {
    "sees",   "finds",  "follows", "watches", "hears", "chases",
    "meets",  "passes", "leaves",  "keeps",   "holds", "knows"};
inline constexpr std::array<std::string_view, 6> kAdv = {
    "slowly", "quietly", "often", "never", "again", "alone"};

template <size_t N>
std::string_view pick(Rng& rng, const std::array<std::string_view, N>& words) {
  return words[rng.next_below(N)];
}

inline void append_sentence(std::string& out, Rng& rng) {
  using namespace corpus_detail;
  out += pick(rng, kDet);
  out += ' ';
  const uint64_t form = rng.next_below(4);
  if (form == 1) {
    out += pick(rng, kAdj);
    out += ' ';
  }
  out += pick(rng, kNoun);
  out += ' ';
  out += pick(rng, kVerb);
  if (form == 3) {
    out += ' ';
    out += pick(rng, kAdv);
  } else {
    out += ' ';
    out += pick(rng, kDet);
    out += ' ';
    if (form == 2) {
      out += pick(rng, kAdj);
      out += ' ';
    }
    out += pick(rng, kNoun);
  }
  out += '.';
}

}  // namespace corpus_detail

/// Generate at least `min_bytes` of sentence text, fully determined by the
/// seed. Sentences are separated by single spaces with a newline every
/// twelfth sentence.
inline std::string generate_corpus(uint64_t seed, size_t min_bytes) {
  Rng rng(seed);
  std::string out;
  out.reserve(min_bytes + 64);
  size_t sentences = 0;
  while (out.size() < min_bytes) {
    corpus_detail::append_sentence(out, rng);
    ++sentences;
    out += (sentences % 12 == 0) ? '\n' : ' ';
  }
  return out;
}

}  // namespace resq
