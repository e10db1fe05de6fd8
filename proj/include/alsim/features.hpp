#pragma once

// Tokenization, TF-IDF vectors, dense projection and the keyword-density heuristic.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "alsim/common.hpp"
#include "alsim/keywords_default.hpp"
#include "json.hpp"

namespace alsim {

// ---------------------------------------------------------------------------
// Tokenizer

namespace detail {
inline constexpr std::string_view kSpecialTokens[] = {"[USER]", "[URL]", "[EMOJI]"};

inline bool is_word_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }
}  // namespace detail

/// Lowercased word tokens; ASCII punctuation and whitespace separate tokens,
/// non-ASCII bytes are word characters. [USER], [URL] and [EMOJI] survive intact.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size();) {
    if (text[i] == '[') {
      bool matched = false;
      for (auto special : detail::kSpecialTokens) {
        if (text.substr(i, special.size()) == special) {
          flush();
          tokens.emplace_back(special);
          i += special.size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    const auto c = static_cast<unsigned char>(text[i]);
    if (detail::is_word_byte(c))
      cur.push_back(static_cast<char>(std::tolower(c)));
    else
      flush();
    ++i;
  }
  flush();
  return tokens;
}

// ---------------------------------------------------------------------------
// Sparse vectors

struct SparseVector {
  std::vector<std::uint32_t> indices;  // strictly increasing, < dimension
  std::vector<double> values;
  std::size_t dimension = 0;

  std::size_t nnz() const { return indices.size(); }
  bool empty() const { return indices.empty(); }

  double squared_norm() const {
    double s = 0.0;
    for (double v : values) s += v * v;
    return s;
  }

  double dot(std::span<const double> dense) const {
    double s = 0.0;
    for (std::size_t k = 0; k < indices.size(); ++k) s += values[k] * dense[indices[k]];
    return s;
  }

  double dot(const SparseVector& other) const {
    double s = 0.0;
    std::size_t a = 0, b = 0;
    while (a < indices.size() && b < other.indices.size()) {
      if (indices[a] == other.indices[b])
        s += values[a++] * other.values[b++];
      else if (indices[a] < other.indices[b])
        ++a;
      else
        ++b;
    }
    return s;
  }
};

// ---------------------------------------------------------------------------
// TF-IDF

struct TfidfOptions {
  std::size_t min_df = 1;
  bool sublinear_tf = false;
};

/// Token index with document frequencies and smoothed idf. Indices follow the
/// lexicographic order of tokens, so fitting does not depend on corpus order.
class Vocabulary {
 public:
  Vocabulary() = default;

  std::size_t size() const { return tokens_.size(); }
  std::size_t doc_count() const { return doc_count_; }
  const TfidfOptions& options() const { return options_; }

  std::optional<std::uint32_t> index_of(std::string_view token) const {
    auto it = index_.find(std::string(token));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  const std::string& token(std::size_t i) const { return tokens_.at(i); }
  std::size_t df(std::size_t i) const { return df_.at(i); }
  double idf(std::size_t i) const { return idf_.at(i); }

  /// Content hash of (tokens, df, N); ties persisted models to their features.
  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a(std::to_string(doc_count_));
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      h = fnv1a(tokens_[i], h);
      h = fnv1a("\x1f" + std::to_string(df_[i]) + "\x1e", h);
    }
    return h;
  }

  nlohmann::json to_json() const {
    nlohmann::json toks = nlohmann::json::array();
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      toks.push_back({{"token", tokens_[i]}, {"index", i}, {"df", df_[i]}});
    return {{"doc_count", doc_count_},
            {"min_df", options_.min_df},
            {"sublinear_tf", options_.sublinear_tf},
            {"tokens", std::move(toks)}};
  }

  static Vocabulary from_json(const nlohmann::json& j) {
    std::vector<std::pair<std::string, std::size_t>> entries;
    const auto& toks = j.at("tokens");
    entries.resize(toks.size());
    for (const auto& t : toks) {
      const auto idx = t.at("index").get<std::size_t>();
      if (idx >= entries.size()) throw std::runtime_error("vocabulary index out of range");
      entries[idx] = {t.at("token").get<std::string>(), t.at("df").get<std::size_t>()};
    }
    TfidfOptions opts;
    opts.min_df = j.value("min_df", std::size_t{1});
    opts.sublinear_tf = j.value("sublinear_tf", false);
    return Vocabulary(std::move(entries), j.at("doc_count").get<std::size_t>(), opts);
  }

  Vocabulary(std::vector<std::pair<std::string, std::size_t>> entries, std::size_t doc_count,
             TfidfOptions options)
      : doc_count_(doc_count), options_(options) {
    tokens_.reserve(entries.size());
    for (auto& [tok, df] : entries) {
      if (df < 1) throw std::invalid_argument("document frequency must be >= 1");
      index_.emplace(tok, static_cast<std::uint32_t>(tokens_.size()));
      tokens_.push_back(std::move(tok));
      df_.push_back(df);
      idf_.push_back(std::log((1.0 + double(doc_count)) / (1.0 + double(df))) + 1.0);
    }
    if (index_.size() != tokens_.size()) throw std::invalid_argument("duplicate vocabulary token");
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::size_t> df_;
  std::vector<double> idf_;
  std::unordered_map<std::string, std::uint32_t> index_;
  std::size_t doc_count_ = 0;
  TfidfOptions options_;
};

/// idf(t) = ln((1+N)/(1+df(t))) + 1 over tokens with df >= min_df.
inline Vocabulary fit_tfidf(std::span<const std::string> corpus_texts, TfidfOptions options = {}) {
  if (corpus_texts.empty()) throw std::invalid_argument("fit_tfidf: empty corpus");
  std::map<std::string, std::size_t> df;
  for (const auto& text : corpus_texts) {
    auto toks = tokenize(text);
    std::sort(toks.begin(), toks.end());
    toks.erase(std::unique(toks.begin(), toks.end()), toks.end());
    for (auto& t : toks) ++df[std::move(t)];
  }
  std::vector<std::pair<std::string, std::size_t>> entries;
  for (auto& [tok, count] : df)
    if (count >= options.min_df) entries.emplace_back(tok, count);
  return Vocabulary(std::move(entries), corpus_texts.size(), options);
}

/// tf·idf weights, L2-normalized. Out-of-vocabulary tokens are ignored; a text
/// with none in vocabulary maps to the zero vector.
inline SparseVector transform(std::string_view text, const Vocabulary& vocab) {
  std::map<std::uint32_t, double> tf;
  for (const auto& tok : tokenize(text))
    if (auto idx = vocab.index_of(tok)) tf[*idx] += 1.0;
  SparseVector v;
  v.dimension = vocab.size();
  v.indices.reserve(tf.size());
  v.values.reserve(tf.size());
  for (auto [idx, count] : tf) {
    const double w = (vocab.options().sublinear_tf ? 1.0 + std::log(count) : count) * vocab.idf(idx);
    v.indices.push_back(idx);
    v.values.push_back(w);
  }
  const double norm = std::sqrt(v.squared_norm());
  if (norm > 0.0)
    for (auto& w : v.values) w /= norm;
  return v;
}

inline std::vector<SparseVector> transform_all(std::span<const std::string> texts,
                                               const Vocabulary& vocab) {
  std::vector<SparseVector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(transform(t, vocab));
  return out;
}

// ---------------------------------------------------------------------------
// Dense projection

/// Seeded sparse random projection (entries ±sqrt(3/dim) with probability 1/6
/// each, 0 otherwise). Column j depends only on (seed, j, dim).
class RandomProjection {
 public:
  RandomProjection(std::size_t output_dim, std::uint64_t seed) : dim_(output_dim), seed_(seed) {
    if (output_dim == 0) throw std::invalid_argument("projection dimension must be >= 1");
  }

  std::size_t output_dim() const { return dim_; }
  std::uint64_t seed() const { return seed_; }

  DenseVector project(const SparseVector& v) const {
    DenseVector out(dim_, 0.0);
    const double scale = std::sqrt(3.0 / double(dim_));
    for (std::size_t k = 0; k < v.indices.size(); ++k) {
      const auto& col = column(v.indices[k]);
      for (const auto& [row, sign] : col) out[row] += sign * scale * v.values[k];
    }
    return out;
  }

 private:
  using Column = std::vector<std::pair<std::uint32_t, double>>;

  const Column& column(std::uint32_t j) const {
    std::lock_guard lock(mu_);
    auto it = cache_.find(j);
    if (it != cache_.end()) return it->second;
    Rng rng(derive_seed(seed_ ^ (std::uint64_t(j) * 0x9e3779b97f4a7c15ULL), "projection"));
    Column col;
    for (std::uint32_t r = 0; r < dim_; ++r) {
      const auto u = uniform_index(rng, 6);
      if (u == 0) col.emplace_back(r, 1.0);
      else if (u == 1) col.emplace_back(r, -1.0);
    }
    return cache_.emplace(j, std::move(col)).first->second;
  }

  std::size_t dim_;
  std::uint64_t seed_;
  mutable std::mutex mu_;
  mutable std::unordered_map<std::uint32_t, Column> cache_;
};

inline DenseVector project_dense(const SparseVector& v, std::size_t dim, std::uint64_t rng_seed) {
  return RandomProjection(dim, rng_seed).project(v);
}

// ---------------------------------------------------------------------------
// Keyword heuristic

class KeywordList {
 public:
  KeywordList(std::vector<std::string> keywords, std::string provenance)
      : provenance_(std::move(provenance)) {
    for (auto& k : keywords) {
      auto toks = tokenize(k);
      if (toks.size() != 1 || toks.front() != k)
        throw std::invalid_argument("keyword '" + k + "' is not a single lowercase token");
      words_.insert(std::move(k));
    }
    if (words_.empty()) throw std::invalid_argument("keyword list is empty");
  }

  bool contains(std::string_view token) const { return words_.count(std::string(token)) > 0; }
  std::size_t size() const { return words_.size(); }
  const std::string& provenance() const { return provenance_; }

  std::vector<std::string> sorted() const {
    std::vector<std::string> out(words_.begin(), words_.end());
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::unordered_set<std::string> words_;
  std::string provenance_;
};

/// One keyword per line; blank lines and lines starting with '#' are skipped.
inline KeywordList load_keyword_list(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open keyword list: " + path.string());
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto b = line.find_first_not_of(" \t");
    if (b == std::string::npos || line[b] == '#') continue;
    const auto e = line.find_last_not_of(" \t");
    words.push_back(line.substr(b, e - b + 1));
  }
  return KeywordList(std::move(words), path.string());
}

inline KeywordList default_keywords() {
  std::vector<std::string> words(std::begin(kDefaultKeywords), std::end(kDefaultKeywords));
  return KeywordList(std::move(words), std::string(kDefaultKeywordsProvenance));
}

/// Fraction of tokens that are keywords; 0 for text without tokens.
inline double keyword_density(std::string_view text, const KeywordList& keywords) {
  const auto toks = tokenize(text);
  if (toks.empty()) return 0.0;
  std::size_t hits = 0;
  for (const auto& t : toks) hits += keywords.contains(t);
  return double(hits) / double(toks.size());
}

/// 1 when the keyword density strictly exceeds `threshold`.
inline Label weak_label(std::string_view text, const KeywordList& keywords, double threshold) {
  if (!(threshold >= 0.0 && threshold <= 1.0))
    throw std::invalid_argument("threshold must lie in [0, 1]");
  return keyword_density(text, keywords) > threshold ? kAbuse : kNonAbuse;
}

}  // namespace alsim
