#pragma once

// Dataset ingestion, cleaning, label binarization and class rebalancing.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "alsim/common.hpp"
#include "json.hpp"

namespace alsim {

struct Document {
  DocId id = 0;
  std::string raw_text;
  std::string text;       // cleaned
  std::string raw_label;  // as read from the source file
  Label label = kNonAbuse;
  std::string source;
};

enum class LabelScheme { kBinary, kWiki, kTweets };

inline LabelScheme parse_label_scheme(std::string_view s) {
  if (s == "binary") return LabelScheme::kBinary;
  if (s == "wiki") return LabelScheme::kWiki;
  if (s == "tweets") return LabelScheme::kTweets;
  throw std::invalid_argument("unknown label scheme: " + std::string(s));
}

inline std::string_view to_string(LabelScheme s) {
  switch (s) {
    case LabelScheme::kBinary: return "binary";
    case LabelScheme::kWiki: return "wiki";
    case LabelScheme::kTweets: return "tweets";
  }
  return "binary";
}

class UnknownLabelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetError : public std::runtime_error {
 public:
  DatasetError(const std::string& what, std::size_t row)
      : std::runtime_error(what + " (row " + std::to_string(row) + ")"), row_(row) {}
  std::size_t row() const { return row_; }

 private:
  std::size_t row_;
};

namespace detail {
inline std::string lower_trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  std::string out(s.substr(b, e - b));
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}
}  // namespace detail

/// Maps a source-specific raw label onto {0, 1}.
///
/// wiki: personal attack annotations ("1"/"true"/"attack" vs "0"/"false"/"normal").
/// tweets: abusive and hateful are 1, normal and spam are 0.
inline Label binarize_label(std::string_view raw_label, LabelScheme scheme) {
  const std::string v = detail::lower_trim(raw_label);
  switch (scheme) {
    case LabelScheme::kBinary:
      if (v == "1") return kAbuse;
      if (v == "0") return kNonAbuse;
      break;
    case LabelScheme::kWiki:
      if (v == "1" || v == "1.0" || v == "true" || v == "attack" || v == "personal_attack")
        return kAbuse;
      if (v == "0" || v == "0.0" || v == "false" || v == "normal" || v == "none" ||
          v == "not_attack")
        return kNonAbuse;
      break;
    case LabelScheme::kTweets:
      if (v == "abusive" || v == "hateful" || v == "hate") return kAbuse;
      if (v == "normal" || v == "spam") return kNonAbuse;
      break;
  }
  throw UnknownLabelError("unknown label '" + std::string(raw_label) + "' for scheme " +
                          std::string(to_string(scheme)));
}

// ---------------------------------------------------------------------------
// Loading

enum class FileFormat { kCsv, kTsv, kJsonl };

inline FileFormat parse_file_format(std::string_view s) {
  if (s == "csv") return FileFormat::kCsv;
  if (s == "tsv") return FileFormat::kTsv;
  if (s == "jsonl" || s == "json-lines") return FileFormat::kJsonl;
  throw std::invalid_argument("unknown file format: " + std::string(s));
}

struct ColumnMapping {
  FileFormat format = FileFormat::kCsv;
  std::string text_column = "text";
  std::string label_column = "label";
  LabelScheme scheme = LabelScheme::kBinary;
  std::string source;  // tag copied into every Document
};

namespace detail {

// One delimited record, RFC 4180 quoting. Returns nullopt at end of input.
// `line` is advanced past every physical line consumed.
inline std::optional<std::vector<std::string>> read_delimited_record(std::istream& in, char delim,
                                                                     std::size_t& line) {
  std::vector<std::string> fields;
  std::string field;
  bool in_quotes = false;
  bool any = false;
  const std::size_t start_line = line + 1;
  int ch;
  while ((ch = in.get()) != EOF) {
    any = true;
    const char c = static_cast<char>(ch);
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      in_quotes = true;
    } else if (c == delim) {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      ++line;
      if (!field.empty() && field.back() == '\r') field.pop_back();
      fields.push_back(std::move(field));
      return fields;
    } else {
      field.push_back(c);
    }
  }
  if (in_quotes) throw DatasetError("unterminated quoted field", start_line);
  if (!any) return std::nullopt;
  ++line;
  if (!field.empty() && field.back() == '\r') field.pop_back();
  fields.push_back(std::move(field));
  return fields;
}

inline std::string json_field_as_string(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) return format_double(v.get<double>());
  return v.dump();
}

}  // namespace detail

/// Reads one Document per record. Ids are assigned sequentially in file order;
/// `text` starts as a copy of `raw_text` until clean_corpus runs.
inline std::vector<Document> load_dataset(const std::filesystem::path& path,
                                          const ColumnMapping& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file: " + path.string());

  std::vector<Document> docs;
  auto add = [&](std::string text, std::string raw_label, std::size_t row) {
    Document d;
    d.id = static_cast<DocId>(docs.size());
    d.raw_text = std::move(text);
    d.text = d.raw_text;
    d.raw_label = std::move(raw_label);
    try {
      d.label = binarize_label(d.raw_label, schema.scheme);
    } catch (const UnknownLabelError& e) {
      throw DatasetError(e.what(), row);
    }
    d.source = schema.source;
    docs.push_back(std::move(d));
  };

  if (schema.format == FileFormat::kJsonl) {
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      ++row;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.find_first_not_of(" \t") == std::string::npos) continue;
      nlohmann::json rec;
      try {
        rec = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw DatasetError(std::string("malformed JSON record: ") + e.what(), row);
      }
      if (!rec.is_object() || !rec.contains(schema.text_column) ||
          !rec.contains(schema.label_column))
        throw DatasetError("record lacks '" + schema.text_column + "' or '" +
                               schema.label_column + "'",
                           row);
      add(detail::json_field_as_string(rec[schema.text_column]),
          detail::json_field_as_string(rec[schema.label_column]), row);
    }
  } else {
    const char delim = schema.format == FileFormat::kTsv ? '\t' : ',';
    std::size_t line = 0;
    auto header = detail::read_delimited_record(in, delim, line);
    if (!header) {
      warn("dataset file is empty: " + path.string());
      return docs;
    }
    if (!header->empty() && header->front().starts_with("\xEF\xBB\xBF"))
      header->front().erase(0, 3);
    auto column = [&](const std::string& name) {
      auto it = std::find(header->begin(), header->end(), name);
      if (it == header->end()) throw DatasetError("missing column '" + name + "'", 1);
      return static_cast<std::size_t>(it - header->begin());
    };
    const std::size_t text_col = column(schema.text_column);
    const std::size_t label_col = column(schema.label_column);
    while (true) {
      const std::size_t row = line + 1;
      auto rec = detail::read_delimited_record(in, delim, line);
      if (!rec) break;
      if (rec->size() == 1 && rec->front().empty()) continue;  // blank line
      if (rec->size() != header->size())
        throw DatasetError("expected " + std::to_string(header->size()) + " fields, got " +
                               std::to_string(rec->size()),
                           row);
      add(std::move((*rec)[text_col]), std::move((*rec)[label_col]), row);
    }
  }
  if (docs.empty()) warn("dataset contains no records: " + path.string());
  return docs;
}

// ---------------------------------------------------------------------------
// Cleaning

inline constexpr std::string_view kUserToken = "[USER]";
inline constexpr std::string_view kUrlToken = "[URL]";
inline constexpr std::string_view kEmojiToken = "[EMOJI]";

namespace detail {

inline bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Decodes one UTF-8 codepoint at s[i]; returns {codepoint, length}. Invalid
// sequences decode as a single byte with codepoint -1.
inline std::pair<std::int32_t, std::size_t> decode_utf8(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1};
  std::size_t len;
  std::int32_t cp;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {-1, 1};
  }
  if (i + len > s.size()) return {-1, 1};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {-1, 1};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len};
}

inline bool is_emoji(std::int32_t cp) {
  return (cp >= 0x1F000 && cp <= 0x1FAFF) || (cp >= 0x2600 && cp <= 0x27BF) ||
         (cp >= 0x2B05 && cp <= 0x2B55) || cp == 0x231A || cp == 0x231B ||
         (cp >= 0x23E9 && cp <= 0x23FA) || cp == 0x3030 || cp == 0x303D || cp == 0x3297 ||
         cp == 0x3299;
}

// Joiners, variation selectors, skin tones, tags and keycaps continue an emoji.
inline bool is_emoji_modifier(std::int32_t cp) {
  return cp == 0x200D || cp == 0xFE0F || cp == 0xFE0E || cp == 0x20E3 ||
         (cp >= 0x1F3FB && cp <= 0x1F3FF) || (cp >= 0xE0020 && cp <= 0xE007F);
}

inline std::string replace_emoji(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool in_emoji = false;
  bool after_joiner = false;
  for (std::size_t i = 0; i < s.size();) {
    auto [cp, len] = decode_utf8(s, i);
    if (in_emoji && is_emoji_modifier(cp)) {
      after_joiner = cp == 0x200D;
    } else if (is_emoji(cp)) {
      if (!(in_emoji && after_joiner)) {
        out.push_back(' ');
        out.append(kEmojiToken);
        out.push_back(' ');
      }
      in_emoji = true;
      after_joiner = false;
    } else {
      in_emoji = after_joiner = false;
      out.append(s.substr(i, len));
    }
    i += len;
  }
  return out;
}

inline bool is_scheme_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '+' || c == '-' || c == '.';
}

inline void append_cleaned_token(std::string_view tok, std::string& out) {
  auto emit = [&out](std::string_view t) {
    if (t.empty()) return;
    if (!out.empty()) out.push_back(' ');
    out.append(t);
  };
  if (tok.size() > 1 && tok.front() == '@') {
    emit(kUserToken);
    return;
  }
  if (tok.size() > 4 && detail::lower_trim(tok.substr(0, 4)) == "www.") {
    emit(kUrlToken);
    return;
  }
  const auto sep = tok.find("://");
  if (sep != std::string_view::npos && sep + 3 < tok.size()) {
    std::size_t start = sep;
    while (start > 0 && is_scheme_char(tok[start - 1])) --start;
    while (start < sep && !std::isalpha(static_cast<unsigned char>(tok[start]))) ++start;
    if (start < sep) {
      emit(tok.substr(0, start));
      emit(kUrlToken);
      return;
    }
  }
  emit(tok);
}

}  // namespace detail

/// Emoji → [EMOJI], @-mentions → [USER], URLs → [URL], whitespace collapsed and trimmed.
inline std::string clean_text(std::string_view raw) {
  const std::string spaced = detail::replace_emoji(raw);
  std::string out;
  out.reserve(spaced.size());
  std::size_t i = 0;
  const std::string_view s = spaced;
  while (i < s.size()) {
    while (i < s.size() && detail::is_ascii_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !detail::is_ascii_space(s[j])) ++j;
    if (j > i) detail::append_cleaned_token(s.substr(i, j - i), out);
    i = j;
  }
  return out;
}

/// Cleans every document's text, then drops empty results and exact
/// duplicates of an earlier cleaned text.
inline std::vector<Document> clean_corpus(std::vector<Document> docs) {
  std::vector<Document> out;
  out.reserve(docs.size());
  std::unordered_set<std::string> seen;
  std::size_t empties = 0;
  for (auto& d : docs) {
    d.text = clean_text(d.text);
    if (d.text.empty()) {
      ++empties;
      continue;
    }
    if (!seen.insert(d.text).second) continue;
    out.push_back(std::move(d));
  }
  if (empties > 0)
    warn(std::to_string(empties) + " document(s) empty after cleaning were dropped");
  return out;
}

// ---------------------------------------------------------------------------
// Rebalancing

struct RebalancedDataset {
  std::vector<Document> train;  // the unlabeled pool, sorted by id
  std::vector<Document> test;   // held-out, sorted by id
  double imbalance = 0.0;
  std::size_t pool_size = 0;
  std::size_t test_size = 0;
};

/// Thrown when a source cannot supply the requested class counts.
class InsufficientDataError : public std::runtime_error {
 public:
  InsufficientDataError(const std::string& what, std::size_t max_pool_size)
      : std::runtime_error(what + "; maximum feasible pool size is " +
                           std::to_string(max_pool_size)),
        max_pool_size_(max_pool_size) {}
  std::size_t max_pool_size() const { return max_pool_size_; }

 private:
  std::size_t max_pool_size_;
};

/// Abuse count for a split of `size` at `imbalance`, rounded down.
inline std::size_t abuse_count(double imbalance, std::size_t size) {
  return static_cast<std::size_t>(std::floor(imbalance * static_cast<double>(size) + 1e-9));
}

namespace detail {

inline void check_imbalance(double imbalance) {
  if (!(imbalance > 0.0 && imbalance < 1.0))
    throw std::invalid_argument("imbalance must lie in (0, 1)");
}

inline void check_unique_ids(const std::vector<Document>& docs) {
  std::unordered_set<DocId> ids;
  for (const auto& d : docs)
    if (!ids.insert(d.id).second)
      throw std::invalid_argument("duplicate document id " + std::to_string(d.id));
}

// Largest pool size p whose nominal class shares imbalance*p and
// (1-imbalance)*p fit into what is left after the test split. Counted before
// rounding, so the reported size never relies on floor() to squeeze in.
inline std::size_t max_feasible_pool(double imbalance, std::size_t pos, std::size_t neg,
                                     std::size_t extra_pos, std::size_t extra_neg) {
  auto feasible = [&](std::size_t p) {
    if (extra_pos > pos || extra_neg > neg) return false;
    const double n = static_cast<double>(p);
    return imbalance * n <= static_cast<double>(pos - extra_pos) + 1e-9 &&
           (1.0 - imbalance) * n <= static_cast<double>(neg - extra_neg) + 1e-9;
  };
  std::size_t lo = 0, hi = pos + neg;
  if (!feasible(0)) return 0;
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo + 1) / 2;
    if (feasible(mid))
      lo = mid;
    else
      hi = mid - 1;
  }
  return lo;
}

inline void split_by_class(const std::vector<Document>& docs, std::vector<std::size_t>& pos,
                           std::vector<std::size_t>& neg) {
  for (std::size_t i = 0; i < docs.size(); ++i)
    (docs[i].label == kAbuse ? pos : neg).push_back(i);
}

inline void sort_by_id(std::vector<Document>& docs) {
  std::sort(docs.begin(), docs.end(),
            [](const Document& a, const Document& b) { return a.id < b.id; });
}

}  // namespace detail

/// Draws a train pool and a test set from one source, both at `imbalance`,
/// sampling uniformly without replacement within each class.
inline RebalancedDataset rebalance(const std::vector<Document>& docs, double imbalance,
                                   std::size_t pool_size, std::size_t test_size,
                                   std::uint64_t rng_seed) {
  detail::check_imbalance(imbalance);
  detail::check_unique_ids(docs);
  std::vector<std::size_t> pos, neg;
  detail::split_by_class(docs, pos, neg);

  const std::size_t train_pos = abuse_count(imbalance, pool_size);
  const std::size_t test_pos = abuse_count(imbalance, test_size);
  const std::size_t train_neg = pool_size - train_pos;
  const std::size_t test_neg = test_size - test_pos;
  if (train_pos + test_pos > pos.size() || train_neg + test_neg > neg.size()) {
    const std::size_t max_pool =
        detail::max_feasible_pool(imbalance, pos.size(), neg.size(), test_pos, test_neg);
    throw InsufficientDataError(
        "source has " + std::to_string(pos.size()) + " abusive / " +
            std::to_string(neg.size()) + " non-abusive documents, need " +
            std::to_string(train_pos + test_pos) + " / " + std::to_string(train_neg + test_neg),
        max_pool);
  }

  Rng pos_rng(derive_seed(rng_seed, "rebalance/abuse"));
  Rng neg_rng(derive_seed(rng_seed, "rebalance/non-abuse"));
  const auto pos_pick = sample_without_replacement(pos, train_pos + test_pos, pos_rng);
  const auto neg_pick = sample_without_replacement(neg, train_neg + test_neg, neg_rng);

  RebalancedDataset out;
  out.imbalance = imbalance;
  out.pool_size = pool_size;
  out.test_size = test_size;
  for (std::size_t k = 0; k < pos_pick.size(); ++k)
    (k < train_pos ? out.train : out.test).push_back(docs[pos_pick[k]]);
  for (std::size_t k = 0; k < neg_pick.size(); ++k)
    (k < train_neg ? out.train : out.test).push_back(docs[neg_pick[k]]);
  detail::sort_by_id(out.train);
  detail::sort_by_id(out.test);
  return out;
}

/// Variant for sources with a predefined test split: the pool is drawn from
/// `train_source` and the test set from `test_source`. Ids must be unique
/// across both sources.
inline RebalancedDataset rebalance_presplit(const std::vector<Document>& train_source,
                                            const std::vector<Document>& test_source,
                                            double imbalance, std::size_t pool_size,
                                            std::size_t test_size, std::uint64_t rng_seed) {
  detail::check_imbalance(imbalance);
  {
    std::vector<Document> all = train_source;
    all.insert(all.end(), test_source.begin(), test_source.end());
    detail::check_unique_ids(all);
  }
  std::vector<std::size_t> tr_pos, tr_neg, te_pos, te_neg;
  detail::split_by_class(train_source, tr_pos, tr_neg);
  detail::split_by_class(test_source, te_pos, te_neg);

  const std::size_t train_pos = abuse_count(imbalance, pool_size);
  const std::size_t test_pos = abuse_count(imbalance, test_size);
  const std::size_t train_neg = pool_size - train_pos;
  const std::size_t test_neg = test_size - test_pos;
  if (train_pos > tr_pos.size() || train_neg > tr_neg.size()) {
    throw InsufficientDataError(
        "training source has " + std::to_string(tr_pos.size()) + " abusive / " +
            std::to_string(tr_neg.size()) + " non-abusive documents, need " +
            std::to_string(train_pos) + " / " + std::to_string(train_neg),
        detail::max_feasible_pool(imbalance, tr_pos.size(), tr_neg.size(), 0, 0));
  }
  if (test_pos > te_pos.size() || test_neg > te_neg.size()) {
    throw InsufficientDataError(
        "test source has " + std::to_string(te_pos.size()) + " abusive / " +
            std::to_string(te_neg.size()) + " non-abusive documents, need " +
            std::to_string(test_pos) + " / " + std::to_string(test_neg),
        detail::max_feasible_pool(imbalance, tr_pos.size(), tr_neg.size(), 0, 0));
  }

  Rng rng_a(derive_seed(rng_seed, "rebalance/train/abuse"));
  Rng rng_b(derive_seed(rng_seed, "rebalance/train/non-abuse"));
  Rng rng_c(derive_seed(rng_seed, "rebalance/test/abuse"));
  Rng rng_d(derive_seed(rng_seed, "rebalance/test/non-abuse"));
  RebalancedDataset out;
  out.imbalance = imbalance;
  out.pool_size = pool_size;
  out.test_size = test_size;
  for (auto i : sample_without_replacement(tr_pos, train_pos, rng_a))
    out.train.push_back(train_source[i]);
  for (auto i : sample_without_replacement(tr_neg, train_neg, rng_b))
    out.train.push_back(train_source[i]);
  for (auto i : sample_without_replacement(te_pos, test_pos, rng_c))
    out.test.push_back(test_source[i]);
  for (auto i : sample_without_replacement(te_neg, test_neg, rng_d))
    out.test.push_back(test_source[i]);
  detail::sort_by_id(out.train);
  detail::sort_by_id(out.test);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: one JSON object per line, {id, text, label, split}.

inline void save_rebalanced_jsonl(const RebalancedDataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  auto dump = [&out](const Document& d, std::string_view split) {
    nlohmann::json j = {{"id", d.id}, {"text", d.text}, {"label", int(d.label)}, {"split", split}};
    out << j.dump() << '\n';
  };
  for (const auto& d : ds.train) dump(d, "train");
  for (const auto& d : ds.test) dump(d, "test");
}

inline RebalancedDataset load_rebalanced_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  RebalancedDataset ds;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DatasetError(e.what(), row);
    }
    Document d;
    d.id = j.at("id").get<DocId>();
    d.text = d.raw_text = j.at("text").get<std::string>();
    d.label = static_cast<Label>(j.at("label").get<int>());
    if (d.label != kAbuse && d.label != kNonAbuse) throw DatasetError("label not in {0,1}", row);
    d.raw_label = std::to_string(int(d.label));
    const auto split = j.at("split").get<std::string>();
    if (split == "train")
      ds.train.push_back(std::move(d));
    else if (split == "test")
      ds.test.push_back(std::move(d));
    else
      throw DatasetError("unknown split '" + split + "'", row);
  }
  detail::sort_by_id(ds.train);
  detail::sort_by_id(ds.test);
  ds.pool_size = ds.train.size();
  ds.test_size = ds.test.size();
  std::size_t pos = 0;
  for (const auto& d : ds.train) pos += d.label == kAbuse;
  ds.imbalance = ds.train.empty() ? 0.0 : double(pos) / double(ds.train.size());
  return ds;
}

}  // namespace alsim
