#pragma once

// Desk-scale synthetic abuse corpus. Abusive documents draw tokens from the
// keyword lexicon and from a small "hostile context" vocabulary at higher
// rates than non-abusive ones; everything else is Zipf-distributed filler.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "alsim/common.hpp"
#include "alsim/corpus.hpp"
#include "alsim/features.hpp"
#include "json.hpp"

namespace alsim {

struct SyntheticSpec {
  std::size_t size = 60000;
  double imbalance = 0.5;
  std::size_t neutral_vocab = 4000;
  std::size_t hostile_vocab = 300;
  std::size_t vocab_offset = 0;  // shift into the pseudo-word sequence; distinct domains
  double keyword_rate_abuse = 0.15;
  double keyword_rate_non_abuse = 0.003;
  double hostile_rate_abuse = 0.15;
  double hostile_rate_non_abuse = 0.01;
  std::size_t min_tokens = 8;
  std::size_t max_tokens = 30;
  double zipf_exponent = 1.05;
  std::uint64_t seed = 7;
  std::string source = "synthetic";

  void validate() const {
    auto rate_ok = [](double r) { return r >= 0.0 && r <= 1.0; };
    if (size < 1) throw std::invalid_argument("synthetic corpus size must be >= 1");
    if (!(imbalance >= 0.0 && imbalance <= 1.0))
      throw std::invalid_argument("synthetic imbalance must lie in [0, 1]");
    if (!rate_ok(keyword_rate_abuse) || !rate_ok(keyword_rate_non_abuse) ||
        !rate_ok(hostile_rate_abuse) || !rate_ok(hostile_rate_non_abuse))
      throw std::invalid_argument("synthetic token rates must lie in [0, 1]");
    if (keyword_rate_abuse + hostile_rate_abuse > 1.0 ||
        keyword_rate_non_abuse + hostile_rate_non_abuse > 1.0)
      throw std::invalid_argument("keyword + hostile rate exceeds 1 for a class");
    if (min_tokens < 1 || min_tokens > max_tokens)
      throw std::invalid_argument("need 1 <= min_tokens <= max_tokens");
    if (neutral_vocab < 1) throw std::invalid_argument("neutral_vocab must be >= 1");
    if (hostile_vocab < 1 && (hostile_rate_abuse > 0.0 || hostile_rate_non_abuse > 0.0))
      throw std::invalid_argument("hostile rates need a non-empty hostile vocabulary");
    if (vocab_offset + neutral_vocab + hostile_vocab > 500000)
      throw std::invalid_argument("synthetic vocabulary too large");
    if (!(zipf_exponent > 0.0)) throw std::invalid_argument("zipf_exponent must be positive");
  }

  nlohmann::json to_json() const {
    return {{"size", size},
            {"imbalance", imbalance},
            {"neutral_vocab", neutral_vocab},
            {"hostile_vocab", hostile_vocab},
            {"vocab_offset", vocab_offset},
            {"keyword_rate_abuse", keyword_rate_abuse},
            {"keyword_rate_non_abuse", keyword_rate_non_abuse},
            {"hostile_rate_abuse", hostile_rate_abuse},
            {"hostile_rate_non_abuse", hostile_rate_non_abuse},
            {"min_tokens", min_tokens},
            {"max_tokens", max_tokens},
            {"zipf_exponent", zipf_exponent},
            {"seed", seed},
            {"source", source}};
  }

  static SyntheticSpec from_json(const nlohmann::json& j) {
    SyntheticSpec s;
    s.size = j.value("size", s.size);
    s.imbalance = j.value("imbalance", s.imbalance);
    s.neutral_vocab = j.value("neutral_vocab", s.neutral_vocab);
    s.hostile_vocab = j.value("hostile_vocab", s.hostile_vocab);
    s.vocab_offset = j.value("vocab_offset", s.vocab_offset);
    s.keyword_rate_abuse = j.value("keyword_rate_abuse", s.keyword_rate_abuse);
    s.keyword_rate_non_abuse = j.value("keyword_rate_non_abuse", s.keyword_rate_non_abuse);
    s.hostile_rate_abuse = j.value("hostile_rate_abuse", s.hostile_rate_abuse);
    s.hostile_rate_non_abuse = j.value("hostile_rate_non_abuse", s.hostile_rate_non_abuse);
    s.min_tokens = j.value("min_tokens", s.min_tokens);
    s.max_tokens = j.value("max_tokens", s.max_tokens);
    s.zipf_exponent = j.value("zipf_exponent", s.zipf_exponent);
    s.seed = j.value("seed", s.seed);
    s.source = j.value("source", s.source);
    s.validate();
    return s;
  }
};

namespace detail {

// Injective index -> three-syllable pseudo-word.
inline std::string pseudo_word(std::size_t index) {
  static constexpr std::string_view kOnsets = "bdfgklmnprstvzhjcwxq";
  static constexpr std::string_view kVowels = "aeiou";
  std::string w;
  for (int s = 0; s < 3; ++s) {
    const std::size_t syl = index % 100;
    index /= 100;
    w.push_back(kOnsets[syl / 5]);
    w.push_back(kVowels[syl % 5]);
  }
  return w;
}

class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      acc += 1.0 / std::pow(double(r + 1), exponent);
      cdf_[r] = acc;
    }
    for (auto& c : cdf_) c /= acc;
  }

  std::size_t operator()(Rng& rng) const {
    const double u = uniform_unit(rng);
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
  }

 private:
  std::vector<double> cdf_;
};

}  // namespace detail

/// Exactly abuse_count(imbalance, size) abusive documents, in shuffled order,
/// with ids 0..size-1. Abusive keywords are drawn uniformly from `lexicon`.
inline std::vector<Document> generate_synthetic_corpus(const SyntheticSpec& spec,
                                                       const KeywordList& lexicon) {
  spec.validate();
  std::vector<std::string> neutral, hostile;
  std::size_t next = spec.vocab_offset;
  auto fresh_word = [&] {
    while (true) {
      auto w = detail::pseudo_word(next++);
      if (!lexicon.contains(w)) return w;
    }
  };
  for (std::size_t i = 0; i < spec.neutral_vocab; ++i) neutral.push_back(fresh_word());
  for (std::size_t i = 0; i < spec.hostile_vocab; ++i) hostile.push_back(fresh_word());
  const auto keywords = lexicon.sorted();

  Rng rng(derive_seed(spec.seed, "synthetic"));
  std::vector<Label> labels(spec.size, kNonAbuse);
  const std::size_t n_abuse = abuse_count(spec.imbalance, spec.size);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n_abuse), kAbuse);
  shuffle(labels, rng);

  const detail::ZipfSampler neutral_pick(neutral.size(), spec.zipf_exponent);
  std::vector<Document> docs;
  docs.reserve(spec.size);
  for (std::size_t i = 0; i < spec.size; ++i) {
    const bool abusive = labels[i] == kAbuse;
    const double kw_rate = abusive ? spec.keyword_rate_abuse : spec.keyword_rate_non_abuse;
    const double host_rate = abusive ? spec.hostile_rate_abuse : spec.hostile_rate_non_abuse;
    const std::size_t len =
        spec.min_tokens +
        static_cast<std::size_t>(uniform_index(rng, spec.max_tokens - spec.min_tokens + 1));
    std::string text;
    for (std::size_t t = 0; t < len; ++t) {
      const double u = uniform_unit(rng);
      const std::string* word;
      if (u < kw_rate)
        word = &keywords[static_cast<std::size_t>(uniform_index(rng, keywords.size()))];
      else if (u < kw_rate + host_rate)
        word = &hostile[static_cast<std::size_t>(uniform_index(rng, hostile.size()))];
      else
        word = &neutral[neutral_pick(rng)];
      if (!text.empty()) text.push_back(' ');
      text += *word;
    }
    Document d;
    d.id = static_cast<DocId>(i);
    d.raw_text = text;
    d.text = std::move(text);
    d.label = labels[i];
    d.raw_label = std::to_string(int(d.label));
    d.source = spec.source;
    docs.push_back(std::move(d));
  }
  return docs;
}

}  // namespace alsim
