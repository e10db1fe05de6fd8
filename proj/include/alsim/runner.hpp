#pragma once

// Experiment grids: config files, dataset preparation, concurrent execution,
// on-disk layout and summaries recomputed from the written curves.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "alsim/corpus.hpp"
#include "alsim/curve.hpp"
#include "alsim/engine.hpp"
#include "alsim/features.hpp"
#include "alsim/metrics.hpp"
#include "alsim/plugin.hpp"
#include "alsim/synthetic.hpp"
#include "json.hpp"

namespace alsim {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Dataset sources

struct DatasetSource {
  enum class Kind { kSynthetic, kFile };

  std::string id = "synthetic";
  Kind kind = Kind::kSynthetic;
  SyntheticSpec synthetic;
  fs::path path;       // file sources
  fs::path test_path;  // optional predefined test split
  ColumnMapping columns;
  std::size_t pool_size = 20000;
  std::size_t test_size = 5000;
  std::uint64_t rebalance_seed = 0;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"id", id},
                        {"pool_size", pool_size},
                        {"test_size", test_size},
                        {"rebalance_seed", rebalance_seed}};
    if (kind == Kind::kSynthetic) {
      j["source"] = "synthetic";
      j["synthetic"] = synthetic.to_json();
    } else {
      j["source"] = "file";
      j["path"] = path.string();
      if (!test_path.empty()) j["test_path"] = test_path.string();
      j["format"] = columns.format == FileFormat::kCsv   ? "csv"
                    : columns.format == FileFormat::kTsv ? "tsv"
                                                         : "jsonl";
      j["text_column"] = columns.text_column;
      j["label_column"] = columns.label_column;
      j["scheme"] = to_string(columns.scheme);
    }
    return j;
  }

  static DatasetSource from_json(const nlohmann::json& j) {
    DatasetSource d;
    d.id = j.at("id").get<std::string>();
    if (d.id.empty() || d.id.find_first_of("/\\") != std::string::npos || d.id == "crosseval")
      throw std::invalid_argument("invalid dataset id: '" + d.id + "'");
    const auto source = j.value("source", std::string("synthetic"));
    if (source == "synthetic") {
      d.kind = Kind::kSynthetic;
      if (j.contains("synthetic")) d.synthetic = SyntheticSpec::from_json(j["synthetic"]);
      d.synthetic.source = d.id;
    } else if (source == "file") {
      d.kind = Kind::kFile;
      d.path = j.at("path").get<std::string>();
      if (j.contains("test_path")) d.test_path = j["test_path"].get<std::string>();
      d.columns.format = parse_file_format(j.value("format", std::string("csv")));
      d.columns.text_column = j.value("text_column", d.columns.text_column);
      d.columns.label_column = j.value("label_column", d.columns.label_column);
      d.columns.scheme = parse_label_scheme(j.value("scheme", std::string("binary")));
      d.columns.source = d.id;
    } else {
      throw std::invalid_argument("unknown dataset source: " + source);
    }
    d.pool_size = j.value("pool_size", d.pool_size);
    d.test_size = j.value("test_size", d.test_size);
    d.rebalance_seed = j.value("rebalance_seed", d.rebalance_seed);
    if (d.pool_size == 0 || d.test_size == 0)
      throw std::invalid_argument("dataset " + d.id + ": pool_size and test_size must be positive");
    return d;
  }
};

/// Cleaned documents of a source; test split empty unless predefined.
struct SourceDocuments {
  std::vector<Document> train, test;
};

inline SourceDocuments load_source(const DatasetSource& src, const KeywordList& lexicon) {
  SourceDocuments out;
  if (src.kind == DatasetSource::Kind::kSynthetic) {
    out.train = clean_corpus(generate_synthetic_corpus(src.synthetic, lexicon));
    return out;
  }
  out.train = clean_corpus(load_dataset(src.path, src.columns));
  if (!src.test_path.empty()) {
    auto test = load_dataset(src.test_path, src.columns);
    DocId offset = 0;
    for (const auto& d : out.train) offset = std::max(offset, d.id + 1);
    for (auto& d : test) d.id += offset;
    out.test = clean_corpus(std::move(test));
  }
  return out;
}

inline RebalancedDataset rebalance_source(const DatasetSource& src, const SourceDocuments& docs,
                                          double imbalance) {
  const auto seed = derive_seed(src.rebalance_seed, "rebalance");
  if (src.test_path.empty())
    return rebalance(docs.train, imbalance, src.pool_size, src.test_size, seed);
  return rebalance_presplit(docs.train, docs.test, imbalance, src.pool_size, src.test_size, seed);
}

// ---------------------------------------------------------------------------
// Grid configuration

struct CrossEvalPair {
  std::string train;
  std::string test;
};

struct GridConfig {
  std::vector<DatasetSource> datasets = {DatasetSource{}};
  std::vector<double> imbalances = {0.5, 0.1, 0.05};
  std::vector<ClassifierSpec> classifiers = {ClassifierSpec{}};
  std::vector<QueryStrategy> queries = {QueryStrategy::kLeastConfidence, QueryStrategy::kRandom};
  std::vector<ColdStrategy> colds = {ColdStrategy::kHeuristic};
  std::vector<std::size_t> seed_sizes = {20};
  std::vector<std::size_t> batch_sizes = {50};
  std::size_t budget = 2020;
  std::optional<std::size_t> n_batches;  // when set, budget = seed_size + n_batches * batch_size
  std::vector<std::uint64_t> seeds = {1, 2, 3};

  TfidfOptions tfidf;
  TfidfMode tfidf_mode = TfidfMode::kPool;
  double keyword_threshold = 0.05;
  std::size_t embedding_dim = 256;
  CoresetOptions coreset;
  KMeansOptions kmeans;
  bool strict_n90 = false;
  std::uint64_t passive_seed = 0;

  fs::path output_dir = "outputs";
  fs::path keywords;  // empty: bundled list
  std::size_t workers = 1;
  std::vector<CrossEvalPair> crosseval;

  const DatasetSource& dataset(const std::string& id) const {
    for (const auto& d : datasets)
      if (d.id == id) return d;
    throw std::invalid_argument("unknown dataset id: " + id);
  }

  void validate() const {
    if (datasets.empty()) throw std::invalid_argument("grid needs at least one dataset");
    std::set<std::string> ids, names;
    for (const auto& d : datasets)
      if (!ids.insert(d.id).second) throw std::invalid_argument("duplicate dataset id: " + d.id);
    for (const auto& c : classifiers) {
      if (c.name.empty() || c.name.find_first_of("/\\") != std::string::npos)
        throw std::invalid_argument("invalid classifier name: '" + c.name + "'");
      if (!names.insert(c.name).second)
        throw std::invalid_argument("duplicate classifier name: " + c.name);
    }
    if (imbalances.empty() || classifiers.empty() || queries.empty() || colds.empty() ||
        seed_sizes.empty() || batch_sizes.empty() || seeds.empty())
      throw std::invalid_argument("every grid axis needs at least one value");
    if (workers == 0) throw std::invalid_argument("workers must be >= 1");
    for (const auto& p : crosseval) {
      dataset(p.train);
      dataset(p.test);
    }
  }
};

namespace detail {

template <class T, class F>
std::vector<T> axis(const nlohmann::json& j, const char* key, std::vector<T> fallback, F convert) {
  if (!j.contains(key)) return fallback;
  std::vector<T> out;
  const auto& v = j.at(key);
  if (v.is_array())
    for (const auto& e : v) out.push_back(convert(e));
  else
    out.push_back(convert(v));
  return out;
}

inline void resolve_paths(nlohmann::json& j, const fs::path& base) {
  auto fix = [&](nlohmann::json& v) {
    if (!v.is_string()) return;
    fs::path p = v.get<std::string>();
    if (p.is_relative()) v = (base / p).lexically_normal().string();
  };
  if (j.contains("keywords")) fix(j["keywords"]);
  if (j.contains("datasets") && j["datasets"].is_array())
    for (auto& d : j["datasets"]) {
      if (d.contains("path")) fix(d["path"]);
      if (d.contains("test_path")) fix(d["test_path"]);
    }
}

inline nlohmann::json load_config_json(const fs::path& path, std::vector<fs::path>& stack) {
  const auto canon = fs::weakly_canonical(path);
  for (const auto& p : stack)
    if (p == canon) throw std::invalid_argument("config include cycle at " + path.string());
  stack.push_back(canon);
  nlohmann::json self;
  try {
    self = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument("cannot parse config " + path.string() + ": " + e.what());
  }
  if (!self.is_object()) throw std::invalid_argument("config " + path.string() + " is not an object");
  const auto base = path.parent_path();
  resolve_paths(self, base);
  nlohmann::json merged = nlohmann::json::object();
  if (self.contains("include")) {
    auto inc = self["include"];
    if (inc.is_string()) inc = nlohmann::json::array({inc});
    for (const auto& p : inc) {
      fs::path ip = p.get<std::string>();
      if (ip.is_relative()) ip = base / ip;
      merged.merge_patch(load_config_json(ip, stack));
    }
    self.erase("include");
  }
  merged.merge_patch(self);
  stack.pop_back();
  return merged;
}

}  // namespace detail

/// Reads a config file, applying its "include" files first (later values win).
inline nlohmann::json load_config_json(const fs::path& path) {
  std::vector<fs::path> stack;
  return detail::load_config_json(path, stack);
}

/// Applies "/json/pointer=value" overrides; the value is parsed as JSON and
/// falls back to a plain string.
inline void apply_overrides(nlohmann::json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || o.empty() || o[0] != '/')
      throw std::invalid_argument("override must look like /path/to/key=value: " + o);
    nlohmann::json value;
    try {
      value = nlohmann::json::parse(o.substr(eq + 1));
    } catch (const nlohmann::json::parse_error&) {
      value = o.substr(eq + 1);
    }
    j[nlohmann::json::json_pointer(o.substr(0, eq))] = value;
  }
}

inline GridConfig grid_from_json(const nlohmann::json& j) {
  GridConfig g;
  if (j.contains("datasets")) {
    g.datasets.clear();
    for (const auto& d : j["datasets"]) g.datasets.push_back(DatasetSource::from_json(d));
  }
  const nlohmann::json grid = j.value("grid", nlohmann::json::object());
  g.imbalances = detail::axis<double>(grid, "imbalance", g.imbalances,
                                      [](const nlohmann::json& v) { return v.get<double>(); });
  g.classifiers = detail::axis<ClassifierSpec>(grid, "classifiers", g.classifiers,
                                               [](const nlohmann::json& v) {
                                                 return ClassifierSpec::from_json(v);
                                               });
  g.queries = detail::axis<QueryStrategy>(grid, "query_strategy", g.queries,
                                          [](const nlohmann::json& v) {
                                            return parse_query_strategy(v.get<std::string>());
                                          });
  g.colds = detail::axis<ColdStrategy>(grid, "cold_strategy", g.colds, [](const nlohmann::json& v) {
    return parse_cold_strategy(v.get<std::string>());
  });
  auto as_size = [](const nlohmann::json& v) { return v.get<std::size_t>(); };
  g.seed_sizes = detail::axis<std::size_t>(grid, "seed_size", g.seed_sizes, as_size);
  g.batch_sizes = detail::axis<std::size_t>(grid, "batch_size", g.batch_sizes, as_size);
  g.seeds = detail::axis<std::uint64_t>(grid, "seeds", g.seeds,
                                        [](const nlohmann::json& v) { return v.get<std::uint64_t>(); });
  g.budget = grid.value("budget", g.budget);
  if (grid.contains("n_batches")) g.n_batches = grid["n_batches"].get<std::size_t>();

  const nlohmann::json s = j.value("settings", nlohmann::json::object());
  g.tfidf.min_df = s.value("min_df", g.tfidf.min_df);
  g.tfidf.sublinear_tf = s.value("sublinear_tf", g.tfidf.sublinear_tf);
  const auto mode = s.value("tfidf_mode", std::string("pool"));
  if (mode == "pool")
    g.tfidf_mode = TfidfMode::kPool;
  else if (mode == "labeled")
    g.tfidf_mode = TfidfMode::kLabeled;
  else
    throw std::invalid_argument("unknown tfidf_mode: " + mode);
  g.keyword_threshold = s.value("keyword_threshold", g.keyword_threshold);
  g.embedding_dim = s.value("embedding_dim", g.embedding_dim);
  g.coreset.include_selected = s.value("coreset_include_selected", g.coreset.include_selected);
  g.kmeans.max_iterations = s.value("kmeans_max_iterations", g.kmeans.max_iterations);
  g.kmeans.tolerance = s.value("kmeans_tolerance", g.kmeans.tolerance);
  g.strict_n90 = s.value("strict_n90", g.strict_n90);
  g.passive_seed = s.value("passive_seed", g.passive_seed);

  g.output_dir = j.value("output_dir", g.output_dir.string());
  if (j.contains("keywords")) g.keywords = j["keywords"].get<std::string>();
  g.workers = j.value("workers", g.workers);
  if (j.contains("crosseval"))
    for (const auto& p : j["crosseval"])
      g.crosseval.push_back({p.at("train").get<std::string>(), p.at("test").get<std::string>()});
  g.validate();
  return g;
}

inline KeywordList grid_keywords(const GridConfig& g) {
  return g.keywords.empty() ? default_keywords() : load_keyword_list(g.keywords);
}

/// One ExperimentConfig per grid cell, seeds kept together.
inline std::vector<ExperimentConfig> expand_grid(const GridConfig& g,
                                                 std::optional<std::string> only_dataset = {}) {
  std::vector<ExperimentConfig> out;
  for (const auto& d : g.datasets) {
    if (only_dataset && d.id != *only_dataset) continue;
    for (double imb : g.imbalances)
      for (const auto& clf : g.classifiers)
        for (auto q : g.queries)
          for (auto cold : g.colds)
            for (auto s : g.seed_sizes)
              for (auto b : g.batch_sizes) {
                ExperimentConfig c;
                c.dataset = d.id;
                c.imbalance = imb;
                c.classifier = clf;
                c.query = q;
                c.cold = cold;
                c.seed_size = s;
                c.batch_size = b;
                c.budget = g.n_batches ? s + *g.n_batches * b : g.budget;
                c.seeds = g.seeds;
                c.output_dir = g.output_dir.string();
                c.tfidf = g.tfidf;
                c.tfidf_mode = g.tfidf_mode;
                c.keyword_threshold = g.keyword_threshold;
                c.embedding_dim = g.embedding_dim;
                c.coreset = g.coreset;
                c.kmeans = g.kmeans;
                c.validate();
                out.push_back(std::move(c));
              }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output layout

inline fs::path dataset_dir(const fs::path& root, const std::string& dataset, double imbalance) {
  return root / dataset / format_double(imbalance);
}

/// <root>/<dataset>/<imbalance>/<classifier>/<strategy>/<cold>-s<seed_size>-b<batch>
inline fs::path experiment_dir(const fs::path& root, const ExperimentConfig& c) {
  return dataset_dir(root, c.dataset, c.imbalance) / c.classifier.name /
         std::string(to_string(c.query)) /
         (std::string(to_string(c.cold)) + "-s" + std::to_string(c.seed_size) + "-b" +
          std::to_string(c.batch_size));
}

inline fs::path run_dir(const fs::path& root, const ExperimentConfig& c, std::uint64_t seed) {
  return experiment_dir(root, c) / ("seed" + std::to_string(seed));
}

// ---------------------------------------------------------------------------
// Prepared data shared across a grid

class DatasetCache {
 public:
  DatasetCache(const GridConfig& grid, const KeywordList& keywords)
      : grid_(grid), keywords_(keywords) {}

  /// Rebalances and featurizes once per (dataset, imbalance).
  const PreparedDataset& get(const std::string& id, double imbalance) {
    std::lock_guard lock(mu_);
    const auto key = id + "@" + format_double(imbalance);
    if (auto it = prepared_.find(key); it != prepared_.end()) return *it->second;
    const auto& src = grid_.dataset(id);
    auto sit = sources_.find(id);
    if (sit == sources_.end()) sit = sources_.emplace(id, load_source(src, keywords_)).first;
    auto rebalanced = rebalance_source(src, sit->second, imbalance);
    rebalanced_.emplace(key, rebalanced);
    auto p = std::make_unique<PreparedDataset>(prepare_dataset(rebalanced, id, grid_.tfidf));
    return *prepared_.emplace(key, std::move(p)).first->second;
  }

  const RebalancedDataset& rebalanced(const std::string& id, double imbalance) {
    get(id, imbalance);
    std::lock_guard lock(mu_);
    return rebalanced_.at(id + "@" + format_double(imbalance));
  }

 private:
  const GridConfig& grid_;
  const KeywordList& keywords_;
  std::mutex mu_;
  std::map<std::string, SourceDocuments> sources_;
  std::map<std::string, RebalancedDataset> rebalanced_;
  std::map<std::string, std::unique_ptr<PreparedDataset>> prepared_;
};

inline nlohmann::json dataset_manifest(const PreparedDataset& p) {
  std::size_t pool_abuse = 0, test_abuse = 0;
  for (auto y : p.pool_labels) pool_abuse += y == kAbuse;
  for (auto y : p.test_labels) test_abuse += y == kAbuse;
  return {{"dataset", p.id},
          {"imbalance", p.imbalance},
          {"pool_size", p.pool_ids.size()},
          {"pool_abuse", pool_abuse},
          {"test_size", p.test_ids.size()},
          {"test_abuse", test_abuse},
          {"vocabulary_size", p.vocab->size()},
          {"vocabulary_fingerprint", detail::hex64(p.vocab->fingerprint())}};
}

/// Writes vocab.json and dataset.json beside the runs of one prepared dataset.
inline fs::path write_dataset_files(const fs::path& root, const PreparedDataset& p) {
  const auto dir = dataset_dir(root, p.id, p.imbalance);
  const auto vocab_path = dir / "vocab.json";
  write_text_file(vocab_path, p.vocab->to_json().dump());
  write_text_file(dir / "dataset.json", dataset_manifest(p).dump(2) + "\n");
  return vocab_path;
}

/// Builtin or plugin learner; both derive their seeds from the run seed the same way.
inline std::unique_ptr<Learner> make_learner(const ExperimentConfig& config, std::uint64_t run_seed,
                                             const fs::path& vocab_path) {
  if (config.classifier.backend == Backend::kBuiltinLinear)
    return make_builtin_learner(config, run_seed);
  ClassifierSpec spec = config.classifier;
  spec.seed = derive_seed(run_seed ^ spec.seed, "fit");
  PluginSettings settings;
  settings.embedding_dim = config.embedding_dim;
  settings.projection_seed = derive_seed(run_seed, "projection");
  settings.vocab_path = fs::absolute(vocab_path);
  return std::make_unique<PluginLearner>(spec, settings);
}

// ---------------------------------------------------------------------------
// Parallel execution

/// Calls job(i) for i in [0, n) on up to `workers` threads. Returns per-job
/// error messages (empty when the job succeeded).
template <class Job>
std::vector<std::string> parallel_for(std::size_t n, std::size_t workers, Job job) {
  std::vector<std::string> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        job(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const auto nthreads = std::max<std::size_t>(1, std::min(workers, n));
  if (nthreads == 1) {
    worker();
    return errors;
  }
  std::vector<std::jthread> pool;
  for (std::size_t t = 0; t < nthreads; ++t) pool.emplace_back(worker);
  return errors;
}

// ---------------------------------------------------------------------------
// Summaries

struct ExperimentSummary {
  nlohmann::json config;  // manifest config of the first seed
  fs::path dir;
  std::optional<double> f1_20k;  // this classifier's passive score
  RunSummary summary;
  std::vector<LearningCurve> runs;  // seed order
};

struct PassiveRecord {
  std::string dataset;
  double imbalance = 0.0;
  std::string classifier;
  double macro_f1 = 0.0;
};

namespace detail {

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string csv_row(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += csv_field(fields[i]);
  }
  return line + "\n";
}

inline std::string opt_num(const std::optional<double>& v) { return v ? format_double(*v) : ""; }

inline std::string n90_str(const std::optional<std::size_t>& v) {
  return v ? std::to_string(*v) : "not reached";
}

inline std::vector<fs::path> find_files(const fs::path& root, const std::string& name) {
  std::vector<fs::path> out;
  if (!fs::exists(root)) return out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == name) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline LearningCurve load_run(const fs::path& dir, const std::string& curve_name = "curve.jsonl") {
  const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  LearningCurve c;
  c.config = manifest.at("config");
  c.seed = manifest.at("seed").get<std::uint64_t>();
  c.failed = manifest.at("failed").get<bool>();
  c.failure_reason = manifest.value("failure_reason", "");
  std::ifstream in(dir / curve_name);
  if (!in) throw std::runtime_error("missing " + (dir / curve_name).string());
  c.points = curve_points_from_jsonl(in);
  return c;
}

inline std::string curve_csv(const RunSummary& s) {
  std::string out = "labeled_count,mean,std,abuse_fraction_mean,abuse_fraction_std\n";
  for (const auto& p : s.curve)
    out += csv_row({std::to_string(p.labeled_count), format_double(p.f1.mean),
                    format_double(p.f1.std), format_double(p.abuse_fraction.mean),
                    format_double(p.abuse_fraction.std)});
  return out;
}

inline std::map<std::pair<std::string, std::string>, std::map<std::string, double>> load_passive(
    const fs::path& root) {
  std::map<std::pair<std::string, std::string>, std::map<std::string, double>> out;
  for (const auto& p : find_files(root, "passive.json")) {
    const auto j = nlohmann::json::parse(read_text_file(p));
    out[{j.at("dataset").get<std::string>(), format_double(j.at("imbalance").get<double>())}]
       [j.at("classifier").get<std::string>()] = j.at("macro_f1").get<double>();
  }
  return out;
}

/// Groups run directories under `root` by their parent experiment directory.
inline std::map<fs::path, std::vector<fs::path>> group_runs(const fs::path& root,
                                                            const std::string& kind) {
  std::map<fs::path, std::vector<fs::path>> groups;
  for (const auto& m : find_files(root, "manifest.json")) {
    const auto j = nlohmann::json::parse(read_text_file(m));
    if (j.value("kind", "") != kind) continue;
    groups[m.parent_path().parent_path()].push_back(m.parent_path());
  }
  for (auto& [_, runs] : groups) {
    std::sort(runs.begin(), runs.end(), [](const fs::path& a, const fs::path& b) {
      const auto sa = a.filename().string(), sb = b.filename().string();
      return sa.size() != sb.size() ? sa.size() < sb.size() : sa < sb;
    });
  }
  return groups;
}

}  // namespace detail

/// Rebuilds every summary artifact from the curves and manifests on disk:
/// summary.csv and seeds.csv at the root, curve.csv per experiment.
inline std::vector<ExperimentSummary> summarize_outputs(const fs::path& root,
                                                        bool strict_n90 = false) {
  const auto passive = detail::load_passive(root);
  std::vector<ExperimentSummary> out;
  for (const auto& [dir, run_dirs] : detail::group_runs(root, "run")) {
    ExperimentSummary e;
    e.dir = dir;
    for (const auto& rd : run_dirs) e.runs.push_back(detail::load_run(rd));
    e.config = e.runs.front().config;
    const auto dataset = e.config.at("dataset").get<std::string>();
    const auto imb = format_double(e.config.at("imbalance").get<double>());
    const auto clf = e.config.at("classifier").at("name").get<std::string>();
    std::optional<double> f1_ref;
    if (auto it = passive.find({dataset, imb}); it != passive.end()) {
      for (const auto& [name, f1] : it->second) f1_ref = f1_ref ? std::max(*f1_ref, f1) : f1;
      if (auto c = it->second.find(clf); c != it->second.end()) e.f1_20k = c->second;
    }
    e.summary = aggregate_runs(e.runs, f1_ref, strict_n90);
    write_text_file(dir / "curve.csv", detail::curve_csv(e.summary));
    out.push_back(std::move(e));
  }

  std::string summary = detail::csv_row(
      {"dataset", "classifier", "F1_20k", "F1_AL", "N_90", "imbalance", "query_strategy",
       "cold_strategy", "seed_size", "batch_size", "budget", "F1_ref", "F1_AL_std",
       "F1_AL_all_runs", "N_90_per_seed", "runs", "failed"});
  std::string seeds = detail::csv_row(
      {"dataset", "imbalance", "classifier", "query_strategy", "cold_strategy", "seed_size",
       "batch_size", "seed", "failed", "points", "F1_AL", "N_90", "final_F1",
       "final_abuse_fraction", "failure_reason"});
  for (const auto& e : out) {
    const auto& c = e.config;
    const auto& s = e.summary;
    std::string per_seed;
    for (std::size_t i = 0; i < s.n90_per_run.size(); ++i)
      per_seed += (i ? ";" : "") + detail::n90_str(s.n90_per_run[i]);
    const std::vector<std::string> key = {
        c.at("dataset").get<std::string>(), format_double(c.at("imbalance").get<double>()),
        c.at("classifier").at("name").get<std::string>(), c.at("query_strategy").get<std::string>(),
        c.at("cold_strategy").get<std::string>(), std::to_string(c.at("seed_size").get<std::size_t>()),
        std::to_string(c.at("batch_size").get<std::size_t>())};
    summary += detail::csv_row(
        {key[0], key[2], detail::opt_num(e.f1_20k),
         s.f1_al ? format_double(s.f1_al->mean) : "",
         s.f1_ref ? detail::n90_str(s.n90) : "", key[1], key[3], key[4], key[5], key[6],
         std::to_string(c.at("budget").get<std::size_t>()), detail::opt_num(s.f1_ref),
         s.f1_al ? format_double(s.f1_al->std) : "", detail::opt_num(s.f1_al_all_runs), per_seed,
         std::to_string(s.n_runs), std::to_string(s.n_failed)});
    for (const auto& r : e.runs) {
      std::vector<std::string> row = key;
      row.push_back(std::to_string(r.seed));
      row.push_back(r.failed ? "1" : "0");
      row.push_back(std::to_string(r.points.size()));
      if (r.points.empty()) {
        row.insert(row.end(), {"", "", "", ""});
      } else {
        row.push_back(format_double(compute_f1_al(r)));
        row.push_back(s.f1_ref ? detail::n90_str(compute_n90(r, *s.f1_ref, strict_n90)) : "");
        row.push_back(format_double(r.points.back().macro_f1));
        row.push_back(format_double(r.points.back().abuse_fraction()));
      }
      row.push_back(r.failure_reason);
      seeds += detail::csv_row(row);
    }
  }
  write_text_file(root / "summary.csv", summary);
  write_text_file(root / "seeds.csv", seeds);
  return out;
}

// ---------------------------------------------------------------------------
// Running a grid

struct GridProgress {
  std::ostream* log = nullptr;  // one line per finished run when set
};

namespace detail {

inline nlohmann::json run_manifest(const std::string& kind, const ExperimentConfig& c,
                                   std::uint64_t seed, const LearningCurve& curve,
                                   double seconds) {
  return {{"kind", kind},
          {"config", c.to_json()},
          {"seed", seed},
          {"failed", curve.failed},
          {"failure_reason", curve.failure_reason},
          {"points", curve.points.size()},
          {"wall_time_seconds", seconds}};
}

class Logger {
 public:
  explicit Logger(std::ostream* out, std::size_t total) : out_(out), total_(total) {}
  void line(const std::string& msg) {
    if (!out_) return;
    std::lock_guard lock(mu_);
    *out_ << "[" << ++done_ << "/" << total_ << "] " << msg << "\n";
    out_->flush();
  }

 private:
  std::ostream* out_;
  std::size_t total_;
  std::size_t done_ = 0;
  std::mutex mu_;
};

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Runs every (config, seed) of the grid plus one passive baseline per
/// (dataset, imbalance, classifier), then summarizes from disk.
inline std::vector<ExperimentSummary> run_grid(const GridConfig& grid, GridProgress progress = {}) {
  grid.validate();
  const auto keywords = grid_keywords(grid);
  const auto configs = expand_grid(grid);
  DatasetCache cache(grid, keywords);
  const fs::path root = grid.output_dir;

  std::map<std::string, fs::path> vocab_paths;
  for (const auto& d : grid.datasets)
    for (double imb : grid.imbalances)
      vocab_paths[d.id + "@" + format_double(imb)] = write_dataset_files(root, cache.get(d.id, imb));
  auto vocab_for = [&](const ExperimentConfig& c) {
    return vocab_paths.at(c.dataset + "@" + format_double(c.imbalance));
  };

  struct PassiveJob {
    ExperimentConfig config;
  };
  std::vector<PassiveJob> passive;
  for (const auto& d : grid.datasets)
    for (double imb : grid.imbalances)
      for (const auto& clf : grid.classifiers) {
        ExperimentConfig c = configs.front();
        c.dataset = d.id;
        c.imbalance = imb;
        c.classifier = clf;
        passive.push_back({c});
      }
  struct RunJob {
    const ExperimentConfig* config;
    std::uint64_t seed;
  };
  std::vector<RunJob> runs;
  for (const auto& c : configs)
    for (auto s : c.seeds) runs.push_back({&c, s});

  detail::Logger log(progress.log, passive.size() + runs.size());
  const auto passive_errors = parallel_for(passive.size(), grid.workers, [&](std::size_t i) {
    const auto& c = passive[i].config;
    const auto t0 = std::chrono::steady_clock::now();
    const auto& data = cache.get(c.dataset, c.imbalance);
    auto learner = make_learner(c, grid.passive_seed, vocab_for(c));
    const auto r = run_passive_baseline(data, *learner);
    nlohmann::json j = {{"dataset", c.dataset},
                        {"imbalance", c.imbalance},
                        {"classifier", c.classifier.name},
                        {"seed", grid.passive_seed},
                        {"macro_f1", r.macro_f1},
                        {"fpr", nullptr},
                        {"fnr", nullptr},
                        {"tp", r.counts.tp},
                        {"fp", r.counts.fp},
                        {"tn", r.counts.tn},
                        {"fn", r.counts.fn}};
    if (r.fpr) j["fpr"] = *r.fpr;
    if (r.fnr) j["fnr"] = *r.fnr;
    const auto dir = dataset_dir(root, c.dataset, c.imbalance) / c.classifier.name;
    write_text_file(dir / "passive.json", j.dump(2) + "\n");
    log.line("passive " + c.dataset + "/" + format_double(c.imbalance) + "/" + c.classifier.name +
             " F1_20k=" + format_fixed(r.macro_f1, 4) + " (" +
             format_fixed(detail::seconds_since(t0), 1) + "s)");
  });
  for (std::size_t i = 0; i < passive.size(); ++i)
    if (!passive_errors[i].empty())
      warn("passive baseline " + passive[i].config.dataset + "/" + passive[i].config.classifier.name +
           " failed: " + passive_errors[i]);

  parallel_for(runs.size(), grid.workers, [&](std::size_t i) {
    const auto& c = *runs[i].config;
    const auto seed = runs[i].seed;
    const auto t0 = std::chrono::steady_clock::now();
    LearningCurve curve;
    try {
      const auto& data = cache.get(c.dataset, c.imbalance);
      auto learner = make_learner(c, seed, vocab_for(c));
      curve = run_active_learning(c, seed, data, *learner, keywords);
    } catch (const std::exception& e) {
      curve = LearningCurve{};
      curve.config = c.to_json();
      curve.seed = seed;
      curve.failed = true;
      curve.failure_reason = e.what();
    }
    const double secs = detail::seconds_since(t0);
    const auto dir = run_dir(root, c, seed);
    write_text_file(dir / "curve.jsonl", curve_to_jsonl(curve));
    write_text_file(dir / "manifest.json",
                    detail::run_manifest("run", c, seed, curve, secs).dump(2) + "\n");
    log.line(fs::relative(dir, root).string() +
             (curve.failed ? " FAILED: " + curve.failure_reason
                           : " F1_AL=" + format_fixed(compute_f1_al(curve), 4)) +
             " (" + format_fixed(secs, 1) + "s)");
  });
  return summarize_outputs(root, grid.strict_n90);
}

// ---------------------------------------------------------------------------
// Cross-dataset evaluation

struct CrossEvalSummary {
  std::string train, test;
  nlohmann::json config;
  fs::path dir;
  RunSummary in_domain;
  RunSummary out_of_domain;
};

inline fs::path crosseval_dir(const fs::path& root, const CrossEvalPair& p, const ExperimentConfig& c) {
  return root / "crosseval" / (p.train + "_on_" + p.test) / format_double(c.imbalance) /
         c.classifier.name / std::string(to_string(c.query)) /
         (std::string(to_string(c.cold)) + "-s" + std::to_string(c.seed_size) + "-b" +
          std::to_string(c.batch_size));
}

/// Rebuilds crosseval.csv and per-experiment curve.csv / ood_curve.csv.
inline std::vector<CrossEvalSummary> summarize_crosseval(const fs::path& root) {
  std::vector<CrossEvalSummary> out;
  std::string csv = detail::csv_row(
      {"train_dataset", "test_dataset", "imbalance", "classifier", "query_strategy",
       "cold_strategy", "seed_size", "batch_size", "runs", "failed", "in_domain_final_F1",
       "in_domain_final_F1_std", "out_of_domain_final_F1", "out_of_domain_final_F1_std",
       "out_of_domain_F1_AL"});
  for (const auto& [dir, run_dirs] : detail::group_runs(root / "crosseval", "crosseval")) {
    CrossEvalSummary e;
    e.dir = dir;
    std::vector<LearningCurve> in, ood;
    for (const auto& rd : run_dirs) {
      in.push_back(detail::load_run(rd));
      ood.push_back(detail::load_run(rd, "ood_curve.jsonl"));
      const auto m = nlohmann::json::parse(read_text_file(rd / "manifest.json"));
      e.train = m.at("train_dataset").get<std::string>();
      e.test = m.at("test_dataset").get<std::string>();
    }
    e.config = in.front().config;
    e.in_domain = aggregate_runs(in);
    e.out_of_domain = aggregate_runs(ood);
    write_text_file(dir / "curve.csv", detail::curve_csv(e.in_domain));
    write_text_file(dir / "ood_curve.csv", detail::curve_csv(e.out_of_domain));
    auto last = [](const RunSummary& s, bool std_dev) -> std::string {
      if (s.curve.empty()) return "";
      return format_double(std_dev ? s.curve.back().f1.std : s.curve.back().f1.mean);
    };
    const auto& c = e.config;
    csv += detail::csv_row(
        {e.train, e.test, format_double(c.at("imbalance").get<double>()),
         c.at("classifier").at("name").get<std::string>(), c.at("query_strategy").get<std::string>(),
         c.at("cold_strategy").get<std::string>(), std::to_string(c.at("seed_size").get<std::size_t>()),
         std::to_string(c.at("batch_size").get<std::size_t>()), std::to_string(e.in_domain.n_runs),
         std::to_string(e.in_domain.n_failed), last(e.in_domain, false), last(e.in_domain, true),
         last(e.out_of_domain, false), last(e.out_of_domain, true),
         e.out_of_domain.f1_al ? format_double(e.out_of_domain.f1_al->mean) : ""});
    out.push_back(std::move(e));
  }
  write_text_file(root / "crosseval.csv", csv);
  return out;
}

/// For each configured (train, test) pair: AL runs on the train dataset, with
/// every iteration's model also scored on the test dataset's test split at
/// the same imbalance, through the train pool's vocabulary.
inline std::vector<CrossEvalSummary> run_crosseval(const GridConfig& grid, GridProgress progress = {}) {
  grid.validate();
  if (grid.crosseval.empty()) throw std::invalid_argument("config has no crosseval pairs");
  const auto keywords = grid_keywords(grid);
  DatasetCache cache(grid, keywords);
  const fs::path root = grid.output_dir;

  struct Job {
    CrossEvalPair pair;
    ExperimentConfig config;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  std::map<std::string, fs::path> vocab_paths;
  for (const auto& p : grid.crosseval)
    for (const auto& c : expand_grid(grid, p.train)) {
      const auto key = c.dataset + "@" + format_double(c.imbalance);
      if (!vocab_paths.count(key))
        vocab_paths[key] = write_dataset_files(root / "crosseval" / "datasets",
                                               cache.get(c.dataset, c.imbalance));
      cache.get(p.test, c.imbalance);
      for (auto s : c.seeds) jobs.push_back({p, c, s});
    }

  detail::Logger log(progress.log, jobs.size());
  parallel_for(jobs.size(), grid.workers, [&](std::size_t i) {
    const auto& job = jobs[i];
    const auto& c = job.config;
    const auto t0 = std::chrono::steady_clock::now();
    LearningCurve curve, ood;
    try {
      const auto& train = cache.get(c.dataset, c.imbalance);
      const auto& test = cache.get(job.pair.test, c.imbalance);
      auto learner = make_learner(c, job.seed, vocab_paths.at(c.dataset + "@" + format_double(c.imbalance)));
      RunObserver observer = [&](const IterationView& v) {
        const IterationModel m{v.point.labeled_count, v.point.labeled_abuse, v.model, v.vocab};
        ood.points.push_back(cross_dataset_eval(std::span(&m, 1), train.imbalance, test).points.front());
      };
      curve = run_active_learning(c, job.seed, train, *learner, keywords, observer);
    } catch (const std::exception& e) {
      curve = LearningCurve{};
      curve.failed = true;
      curve.failure_reason = e.what();
      ood.points.clear();
    }
    const double secs = detail::seconds_since(t0);
    const auto dir = crosseval_dir(root, job.pair, c) / ("seed" + std::to_string(job.seed));
    auto manifest = detail::run_manifest("crosseval", c, job.seed, curve, secs);
    manifest["train_dataset"] = job.pair.train;
    manifest["test_dataset"] = job.pair.test;
    write_text_file(dir / "curve.jsonl", curve_to_jsonl(curve));
    ood.points.resize(curve.points.size());
    write_text_file(dir / "ood_curve.jsonl", curve_to_jsonl(ood));
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
    log.line(fs::relative(dir, root).string() +
             (curve.failed ? " FAILED: " + curve.failure_reason
                           : " final F1 in-domain=" + format_fixed(curve.points.back().macro_f1, 4) +
                                 " out-of-domain=" + format_fixed(ood.points.back().macro_f1, 4)));
  });
  return summarize_crosseval(root);
}

}  // namespace alsim
