#pragma once

// The active-learning loop (seed, fit, evaluate, then query/reveal/refit until
// the budget is spent) and the passive full-pool baseline.

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "alsim/classifier.hpp"
#include "alsim/corpus.hpp"
#include "alsim/curve.hpp"
#include "alsim/features.hpp"
#include "alsim/metrics.hpp"
#include "alsim/pool.hpp"
#include "alsim/strategies.hpp"
#include "json.hpp"

namespace alsim {

/// Where the TF-IDF vocabulary comes from: the whole pool's text (fixed for
/// the run) or only the labeled texts, refitted at every iteration.
enum class TfidfMode { kPool, kLabeled };

inline std::string_view to_string(TfidfMode m) { return m == TfidfMode::kPool ? "pool" : "labeled"; }

struct ExperimentConfig {
  std::string dataset = "synthetic";
  double imbalance = 0.05;
  ClassifierSpec classifier;
  std::size_t seed_size = 20;
  ColdStrategy cold = ColdStrategy::kHeuristic;
  std::size_t batch_size = 50;
  QueryStrategy query = QueryStrategy::kLeastConfidence;
  std::size_t budget = 2020;  // seed_size + n_batches * batch_size
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string output_dir = "outputs";

  TfidfOptions tfidf;
  TfidfMode tfidf_mode = TfidfMode::kPool;
  double keyword_threshold = 0.05;
  std::size_t embedding_dim = 256;
  CoresetOptions coreset;
  KMeansOptions kmeans;

  void validate() const {
    if (!(imbalance > 0.0 && imbalance < 1.0)) throw std::invalid_argument("imbalance must lie in (0, 1)");
    if (seed_size == 0) throw std::invalid_argument("seed_size must be positive");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (budget < seed_size) throw std::invalid_argument("budget must be >= seed_size");
    if (seeds.empty()) throw std::invalid_argument("at least one rng seed is required");
    if (!(keyword_threshold >= 0.0 && keyword_threshold <= 1.0))
      throw std::invalid_argument("keyword_threshold must lie in [0, 1]");
    if (embedding_dim == 0) throw std::invalid_argument("embedding_dim must be positive");
    if (kmeans.max_iterations == 0) throw std::invalid_argument("kmeans_max_iterations must be positive");
    if (!(kmeans.tolerance >= 0.0)) throw std::invalid_argument("kmeans_tolerance must be >= 0");
    classifier.validate();
  }

  nlohmann::json to_json() const {
    return {{"dataset", dataset},
            {"imbalance", imbalance},
            {"classifier", classifier.to_json()},
            {"seed_size", seed_size},
            {"cold_strategy", to_string(cold)},
            {"batch_size", batch_size},
            {"query_strategy", to_string(query)},
            {"budget", budget},
            {"seeds", seeds},
            {"output_dir", output_dir},
            {"min_df", tfidf.min_df},
            {"sublinear_tf", tfidf.sublinear_tf},
            {"tfidf_mode", to_string(tfidf_mode)},
            {"keyword_threshold", keyword_threshold},
            {"embedding_dim", embedding_dim},
            {"coreset_include_selected", coreset.include_selected},
            {"kmeans_max_iterations", kmeans.max_iterations},
            {"kmeans_tolerance", kmeans.tolerance}};
  }

  static ExperimentConfig from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.dataset = j.value("dataset", c.dataset);
    c.imbalance = j.value("imbalance", c.imbalance);
    if (j.contains("classifier")) c.classifier = ClassifierSpec::from_json(j.at("classifier"));
    c.seed_size = j.value("seed_size", c.seed_size);
    c.cold = parse_cold_strategy(j.value("cold_strategy", std::string(to_string(c.cold))));
    c.batch_size = j.value("batch_size", c.batch_size);
    c.query = parse_query_strategy(j.value("query_strategy", std::string(to_string(c.query))));
    c.budget = j.value("budget", c.budget);
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    c.output_dir = j.value("output_dir", c.output_dir);
    c.tfidf.min_df = j.value("min_df", c.tfidf.min_df);
    c.tfidf.sublinear_tf = j.value("sublinear_tf", c.tfidf.sublinear_tf);
    const auto mode = j.value("tfidf_mode", std::string("pool"));
    if (mode == "pool")
      c.tfidf_mode = TfidfMode::kPool;
    else if (mode == "labeled")
      c.tfidf_mode = TfidfMode::kLabeled;
    else
      throw std::invalid_argument("unknown tfidf_mode: " + mode);
    c.keyword_threshold = j.value("keyword_threshold", c.keyword_threshold);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.coreset.include_selected = j.value("coreset_include_selected", c.coreset.include_selected);
    c.kmeans.max_iterations = j.value("kmeans_max_iterations", c.kmeans.max_iterations);
    c.kmeans.tolerance = j.value("kmeans_tolerance", c.kmeans.tolerance);
    c.validate();
    return c;
  }
};

/// A rebalanced dataset with pool-fitted TF-IDF features, built once and
/// shared read-only by every run over it.
struct PreparedDataset {
  std::string id;
  double imbalance = 0.0;
  std::vector<DocId> pool_ids, test_ids;
  std::vector<std::string> pool_texts, test_texts;
  std::vector<Label> pool_labels, test_labels;
  std::shared_ptr<const Vocabulary> vocab;
  std::vector<SparseVector> pool_x, test_x;
};

inline PreparedDataset prepare_dataset(const RebalancedDataset& data, std::string id,
                                       TfidfOptions tfidf = {}) {
  PreparedDataset p;
  p.id = std::move(id);
  p.imbalance = data.imbalance;
  for (const auto& d : data.train) {
    p.pool_ids.push_back(d.id);
    p.pool_texts.push_back(d.text);
    p.pool_labels.push_back(d.label);
  }
  for (const auto& d : data.test) {
    p.test_ids.push_back(d.id);
    p.test_texts.push_back(d.text);
    p.test_labels.push_back(d.label);
  }
  if (!std::is_sorted(p.pool_ids.begin(), p.pool_ids.end()))
    throw std::invalid_argument("pool must be sorted by document id");
  p.vocab = std::make_shared<const Vocabulary>(fit_tfidf(p.pool_texts, tfidf));
  p.pool_x = transform_all(p.pool_texts, *p.vocab);
  p.test_x = transform_all(p.test_texts, *p.vocab);
  return p;
}

inline std::vector<Sample> make_samples(std::span<const DocId> ids,
                                        std::span<const std::string> texts,
                                        std::span<const SparseVector> xs) {
  std::vector<Sample> out;
  out.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out.push_back({ids[i], texts[i], &xs[i]});
  return out;
}

/// Builtin learner for one run; its fit and projection seeds derive from the run seed.
inline std::unique_ptr<Learner> make_builtin_learner(const ExperimentConfig& config,
                                                     std::uint64_t run_seed) {
  ClassifierSpec spec = config.classifier;
  spec.seed = derive_seed(run_seed ^ spec.seed, "fit");
  return std::make_unique<LinearLearner>(spec, config.embedding_dim,
                                         derive_seed(run_seed, "projection"));
}

/// Thresholds p1 at 0.5 (ties go to non-abuse) and scores against gold.
inline CurvePoint evaluate_model(const Model& model, std::span<const Sample> samples,
                                 std::span<const Label> gold) {
  const auto probs = model.predict_proba(samples);
  std::vector<Label> pred;
  pred.reserve(probs.size());
  for (const auto& p : probs) pred.push_back(p[1] > 0.5 ? kAbuse : kNonAbuse);
  const auto counts = confusion(gold, pred);
  const auto rates = fpr_fnr(counts);
  CurvePoint pt;
  pt.macro_f1 = macro_f1(counts);
  pt.fpr = rates.fpr;
  pt.fnr = rates.fnr;
  return pt;
}

/// What an observer sees after each retrain and evaluation.
struct IterationView {
  const PoolState& pool;
  std::shared_ptr<const Model> model;
  std::shared_ptr<const Vocabulary> vocab;
  const CurvePoint& point;
};

using RunObserver = std::function<void(const IterationView&)>;

/// Runs one seeded AL experiment. A single-class seed marks the curve failed
/// and returns it without points.
inline LearningCurve run_active_learning(const ExperimentConfig& config, std::uint64_t seed,
                                         const PreparedDataset& data, Learner& learner,
                                         const KeywordList& keywords,
                                         const RunObserver& observer = {}) {
  config.validate();
  if (config.budget > data.pool_ids.size())
    throw std::invalid_argument("budget " + std::to_string(config.budget) +
                                " exceeds pool size " + std::to_string(data.pool_ids.size()));

  LearningCurve curve;
  curve.config = config.to_json();
  curve.seed = seed;

  PoolState pool(data.pool_labels);
  const std::uint64_t strategy_seed = derive_seed(seed, "strategy");

  std::vector<std::size_t> seed_idx;
  if (config.cold == ColdStrategy::kRandom) {
    seed_idx = seed_random(pool, config.seed_size, strategy_seed);
  } else {
    seed_idx = seed_heuristic(pool, data.pool_texts, config.seed_size, keywords,
                              config.keyword_threshold, strategy_seed);
  }
  pool.reveal(seed_idx);

  const auto pool_samples = make_samples(data.pool_ids, data.pool_texts, data.pool_x);
  const auto test_samples = make_samples(data.test_ids, data.test_texts, data.test_x);

  std::vector<DenseVector> embeddings;
  std::optional<CoresetDistances> coreset;
  if (needs_embeddings(config.query)) {
    embeddings = learner.embed(pool_samples);
    for (const auto& e : embeddings)
      if (e.size() != embeddings.front().size())
        throw std::runtime_error("embedding dimension mismatch within a run");
    if (config.query == QueryStrategy::kGreedyCoreSet) {
      coreset.emplace(embeddings);
      coreset->add_centers(pool.labeled());
    }
  }

  // Per-iteration features in labeled-TF-IDF mode.
  std::vector<SparseVector> iter_pool_x, iter_test_x;
  std::vector<Sample> iter_pool_samples, iter_test_samples;

  while (true) {
    std::shared_ptr<const Vocabulary> vocab = data.vocab;
    const std::vector<Sample>* pool_view = &pool_samples;
    const std::vector<Sample>* test_view = &test_samples;
    if (config.tfidf_mode == TfidfMode::kLabeled) {
      std::vector<std::string> labeled_texts;
      for (auto i : pool.labeled()) labeled_texts.push_back(data.pool_texts[i]);
      vocab = std::make_shared<const Vocabulary>(fit_tfidf(labeled_texts, config.tfidf));
      iter_pool_x = transform_all(data.pool_texts, *vocab);
      iter_test_x = transform_all(data.test_texts, *vocab);
      iter_pool_samples = make_samples(data.pool_ids, data.pool_texts, iter_pool_x);
      iter_test_samples = make_samples(data.test_ids, data.test_texts, iter_test_x);
      pool_view = &iter_pool_samples;
      test_view = &iter_test_samples;
    }

    std::vector<Sample> train;
    std::vector<Label> labels;
    for (auto i : pool.labeled()) {
      train.push_back((*pool_view)[i]);
      labels.push_back(pool.label(i));
    }
    std::shared_ptr<const Model> model;
    try {
      model = learner.fit(train, labels, pool.batch_sizes(), *vocab);
    } catch (const SingleClassError& e) {
      curve.failed = true;
      curve.failure_reason = std::string("single-class labeled set at ") +
                             std::to_string(pool.labeled_count()) + " labels: " + e.what();
      return curve;
    }

    CurvePoint pt = evaluate_model(*model, *test_view, data.test_labels);
    pt.labeled_count = pool.labeled_count();
    pt.labeled_abuse = pool.labeled_abuse_count();
    curve.points.push_back(pt);
    if (observer) observer(IterationView{pool, model, vocab, curve.points.back()});

    if (pool.labeled_count() >= config.budget) break;
    QueryRequest req{&pool, std::min(config.batch_size, config.budget - pool.labeled_count()),
                     config.query, strategy_seed};
    std::vector<std::size_t> picked;
    switch (config.query) {
      case QueryStrategy::kRandom: picked = query_random(req); break;
      case QueryStrategy::kLeastConfidence:
        picked = query_least_confidence(req, model.get(), *pool_view);
        break;
      case QueryStrategy::kGreedyCoreSet:
        picked = query_greedy_coreset(req, embeddings, config.coreset, &*coreset);
        break;
      case QueryStrategy::kEmbeddingKMeans:
        picked = query_embedding_kmeans(req, embeddings, config.kmeans);
        break;
    }
    pool.reveal(picked);
  }
  return curve;
}

inline LearningCurve run_active_learning(const ExperimentConfig& config, std::uint64_t seed,
                                         const PreparedDataset& data, const KeywordList& keywords,
                                         const RunObserver& observer = {}) {
  auto learner = make_builtin_learner(config, seed);
  return run_active_learning(config, seed, data, *learner, keywords, observer);
}

struct PassiveResult {
  ConfusionCounts counts;
  double macro_f1 = 0.0;
  std::optional<double> fpr, fnr;
};

/// Fits once on the whole pool with gold labels and scores the test set.
inline PassiveResult run_passive_baseline(const PreparedDataset& data, Learner& learner) {
  const auto pool_samples = make_samples(data.pool_ids, data.pool_texts, data.pool_x);
  const auto test_samples = make_samples(data.test_ids, data.test_texts, data.test_x);
  const std::vector<std::size_t> batches = {pool_samples.size()};
  const auto model = learner.fit(pool_samples, data.pool_labels, batches, *data.vocab);
  const auto probs = model->predict_proba(test_samples);
  std::vector<Label> pred;
  for (const auto& p : probs) pred.push_back(p[1] > 0.5 ? kAbuse : kNonAbuse);
  PassiveResult r;
  r.counts = confusion(data.test_labels, pred);
  r.macro_f1 = macro_f1(r.counts);
  const auto rates = fpr_fnr(r.counts);
  r.fpr = rates.fpr;
  r.fnr = rates.fnr;
  return r;
}

inline PassiveResult run_passive_baseline(const ExperimentConfig& config, std::uint64_t seed,
                                          const PreparedDataset& data) {
  auto learner = make_builtin_learner(config, seed);
  return run_passive_baseline(data, *learner);
}

// ---------------------------------------------------------------------------
// Out-of-domain evaluation

/// A model retained from one AL iteration together with its feature space.
struct IterationModel {
  std::size_t labeled_count = 0;
  std::size_t labeled_abuse = 0;
  std::shared_ptr<const Model> model;
  std::shared_ptr<const Vocabulary> vocab;
};

/// Observer that keeps every iteration's model.
class ModelRecorder {
 public:
  RunObserver observer() {
    return [this](const IterationView& v) {
      models_.push_back({v.point.labeled_count, v.point.labeled_abuse, v.model, v.vocab});
    };
  }
  const std::vector<IterationModel>& models() const { return models_; }

 private:
  std::vector<IterationModel> models_;
};

/// Scores models trained on dataset A against dataset B's test set, with B's
/// texts transformed through A's vocabulary.
inline LearningCurve cross_dataset_eval(std::span<const IterationModel> models,
                                        double train_imbalance, const PreparedDataset& test_data) {
  if (std::abs(train_imbalance - test_data.imbalance) > 1e-9)
    throw std::invalid_argument("imbalance mismatch between training pool and test set");
  LearningCurve curve;
  const Vocabulary* cached_vocab = nullptr;
  std::vector<SparseVector> xs;
  std::vector<Sample> samples;
  for (const auto& m : models) {
    if (m.vocab.get() != cached_vocab) {
      xs = transform_all(test_data.test_texts, *m.vocab);
      samples = make_samples(test_data.test_ids, test_data.test_texts, xs);
      cached_vocab = m.vocab.get();
    }
    CurvePoint pt = evaluate_model(*m.model, samples, test_data.test_labels);
    pt.labeled_count = m.labeled_count;
    pt.labeled_abuse = m.labeled_abuse;
    curve.points.push_back(pt);
  }
  return curve;
}

}  // namespace alsim
