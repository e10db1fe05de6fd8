#pragma once

// Seed (cold-start) acquisition and batch query strategies.
//
// Every strategy returns batch_size distinct unlabeled pool indices in
// ascending order. Ties are broken by ascending index (= ascending document id).

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "alsim/classifier.hpp"
#include "alsim/common.hpp"
#include "alsim/features.hpp"
#include "alsim/pool.hpp"

namespace alsim {

enum class QueryStrategy { kRandom, kLeastConfidence, kGreedyCoreSet, kEmbeddingKMeans };
enum class ColdStrategy { kRandom, kHeuristic };

inline std::string_view to_string(QueryStrategy s) {
  switch (s) {
    case QueryStrategy::kRandom: return "random";
    case QueryStrategy::kLeastConfidence: return "least_confidence";
    case QueryStrategy::kGreedyCoreSet: return "greedy_coreset";
    case QueryStrategy::kEmbeddingKMeans: return "embedding_kmeans";
  }
  return "random";
}

inline QueryStrategy parse_query_strategy(std::string_view s) {
  if (s == "random") return QueryStrategy::kRandom;
  if (s == "least_confidence") return QueryStrategy::kLeastConfidence;
  if (s == "greedy_coreset") return QueryStrategy::kGreedyCoreSet;
  if (s == "embedding_kmeans") return QueryStrategy::kEmbeddingKMeans;
  throw std::invalid_argument("unknown query strategy: " + std::string(s));
}

inline bool needs_embeddings(QueryStrategy s) {
  return s == QueryStrategy::kGreedyCoreSet || s == QueryStrategy::kEmbeddingKMeans;
}

inline std::string_view to_string(ColdStrategy s) {
  return s == ColdStrategy::kRandom ? "random" : "heuristic";
}

inline ColdStrategy parse_cold_strategy(std::string_view s) {
  if (s == "random") return ColdStrategy::kRandom;
  if (s == "heuristic") return ColdStrategy::kHeuristic;
  throw std::invalid_argument("unknown cold strategy: " + std::string(s));
}

struct QueryRequest {
  const PoolState* pool = nullptr;
  std::size_t batch_size = 0;
  QueryStrategy strategy = QueryStrategy::kRandom;
  std::uint64_t rng_seed = 0;
};

namespace detail {
inline void check_request(const QueryRequest& req) {
  if (!req.pool) throw std::invalid_argument("query request without pool");
  if (req.batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (req.batch_size > req.pool->unlabeled_count())
    throw std::invalid_argument("batch size " + std::to_string(req.batch_size) +
                                " exceeds unlabeled pool of " +
                                std::to_string(req.pool->unlabeled_count()));
}

// Four independent accumulators; the summation order is fixed, so results are
// reproducible across runs and platforms with IEEE doubles.
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  const std::size_t n = a.size();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const double d0 = a[i] - b[i], d1 = a[i + 1] - b[i + 1];
    const double d2 = a[i + 2] - b[i + 2], d3 = a[i + 3] - b[i + 3];
    s0 += d0 * d0;
    s1 += d1 * d1;
    s2 += d2 * d2;
    s3 += d3 * d3;
  }
  for (; i < n; ++i) {
    const double d = a[i] - b[i];
    s0 += d * d;
  }
  return (s0 + s1) + (s2 + s3);
}
// Centroids transposed to dim x k, the layout distance_row reads.
inline std::vector<double> transpose_centroids(const std::vector<DenseVector>& centroids,
                                               std::size_t dim) {
  const std::size_t k = centroids.size();
  std::vector<double> ct(dim * k);
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t d = 0; d < dim; ++d) ct[d * k + c] = centroids[c][d];
  return ct;
}

// Squared distances from x to all k centroids, each bitwise equal to
// squared_distance(x, centroid): same four-lane split, same final combine.
// The inner loops run across centroids and vectorize without reassociation.
inline void distance_row(const double* x, const std::vector<double>& ct, std::size_t dim,
                         std::size_t k, double* __restrict acc) {
  thread_local std::vector<double> lanes;
  lanes.assign(4 * k, 0.0);
  double* __restrict s0 = lanes.data();
  double* __restrict s1 = s0 + k;
  double* __restrict s2 = s1 + k;
  double* __restrict s3 = s2 + k;
  std::size_t d = 0;
  for (; d + 4 <= dim; d += 4) {
    const double* __restrict r0 = &ct[d * k];
    const double* __restrict r1 = r0 + k;
    const double* __restrict r2 = r1 + k;
    const double* __restrict r3 = r2 + k;
    for (std::size_t c = 0; c < k; ++c) {
      const double t0 = x[d] - r0[c], t1 = x[d + 1] - r1[c];
      const double t2 = x[d + 2] - r2[c], t3 = x[d + 3] - r3[c];
      s0[c] += t0 * t0;
      s1[c] += t1 * t1;
      s2[c] += t2 * t2;
      s3[c] += t3 * t3;
    }
  }
  for (; d < dim; ++d) {
    const double* __restrict r = &ct[d * k];
    for (std::size_t c = 0; c < k; ++c) {
      const double t = x[d] - r[c];
      s0[c] += t * t;
    }
  }
  for (std::size_t c = 0; c < k; ++c) acc[c] = (s0[c] + s1[c]) + (s2[c] + s3[c]);
}

// Squared distances from every row of `points` (n x dim, row-major) to every
// centroid, written to out[j * k + c].
inline void all_squared_distances(std::span<const double> points,
                                  const std::vector<DenseVector>& centroids, std::size_t dim,
                                  std::vector<double>& out) {
  const std::size_t k = centroids.size();
  const std::size_t n = dim == 0 ? 0 : points.size() / dim;
  const auto ct = transpose_centroids(centroids, dim);
  out.assign(n * k, 0.0);
  for (std::size_t j = 0; j < n; ++j) distance_row(&points[j * dim], ct, dim, k, &out[j * k]);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Seeding

inline std::vector<std::size_t> seed_random(const PoolState& pool, std::size_t seed_size,
                                            std::uint64_t rng_seed) {
  if (seed_size == 0) throw std::invalid_argument("seed size must be positive");
  if (seed_size > pool.unlabeled_count())
    throw std::invalid_argument("seed size exceeds unlabeled pool");
  Rng rng(derive_seed(rng_seed, "seed/random"));
  auto pick = sample_without_replacement(pool.unlabeled(), seed_size, rng);
  std::sort(pick.begin(), pick.end());
  return pick;
}

/// Equal draws from the weakly-positive and weakly-negative strata.
/// `weak_labels` is indexed by pool index. A short stratum is used up and the
/// remainder filled from the other one, with a warning.
inline std::vector<std::size_t> seed_heuristic(const PoolState& pool,
                                               std::span<const Label> weak_labels,
                                               std::size_t seed_size, std::uint64_t rng_seed) {
  if (seed_size == 0) throw std::invalid_argument("seed size must be positive");
  if (seed_size % 2 != 0) throw std::invalid_argument("heuristic seed size must be even");
  if (seed_size > pool.unlabeled_count())
    throw std::invalid_argument("seed size exceeds unlabeled pool");
  if (weak_labels.size() != pool.size()) throw std::invalid_argument("weak label count mismatch");

  std::vector<std::size_t> pos, neg;
  for (auto i : pool.unlabeled()) (weak_labels[i] == kAbuse ? pos : neg).push_back(i);

  std::size_t want_pos = seed_size / 2, want_neg = seed_size / 2;
  if (pos.size() < want_pos) {
    warn("heuristic seed: only " + std::to_string(pos.size()) +
         " weakly-abusive items, filling from the non-abusive stratum");
    want_neg += want_pos - pos.size();
    want_pos = pos.size();
  } else if (neg.size() < want_neg) {
    warn("heuristic seed: only " + std::to_string(neg.size()) +
         " weakly-non-abusive items, filling from the abusive stratum");
    want_pos += want_neg - neg.size();
    want_neg = neg.size();
  }
  Rng pos_rng(derive_seed(rng_seed, "seed/heuristic/abuse"));
  Rng neg_rng(derive_seed(rng_seed, "seed/heuristic/non-abuse"));
  auto pick = sample_without_replacement(std::move(pos), want_pos, pos_rng);
  auto more = sample_without_replacement(std::move(neg), want_neg, neg_rng);
  pick.insert(pick.end(), more.begin(), more.end());
  std::sort(pick.begin(), pick.end());
  return pick;
}

inline std::vector<std::size_t> seed_heuristic(const PoolState& pool,
                                               std::span<const std::string> texts,
                                               std::size_t seed_size, const KeywordList& keywords,
                                               double threshold, std::uint64_t rng_seed) {
  std::vector<Label> weak;
  weak.reserve(texts.size());
  for (const auto& t : texts) weak.push_back(weak_label(t, keywords, threshold));
  return seed_heuristic(pool, weak, seed_size, rng_seed);
}

// ---------------------------------------------------------------------------
// Random

inline std::vector<std::size_t> query_random(const QueryRequest& req) {
  detail::check_request(req);
  Rng rng(derive_seed(req.rng_seed, "query/random/" + std::to_string(req.pool->iteration())));
  auto pick = sample_without_replacement(req.pool->unlabeled(), req.batch_size, rng);
  std::sort(pick.begin(), pick.end());
  return pick;
}

// ---------------------------------------------------------------------------
// LeastConfidence

inline double least_confidence_score(const ClassProbs& p) {
  return 1.0 - std::max(p[0], p[1]);
}

/// Takes the batch_size unlabeled items with the highest 1 - max_c p(c|x).
/// `pool_probs` is indexed by pool index; labeled entries are ignored.
inline std::vector<std::size_t> query_least_confidence(const QueryRequest& req,
                                                       std::span<const ClassProbs> pool_probs) {
  detail::check_request(req);
  if (pool_probs.size() != req.pool->size())
    throw std::invalid_argument("probability count does not match pool size");
  auto cand = req.pool->unlabeled();
  std::vector<double> score(req.pool->size(), 0.0);
  for (auto i : cand) score[i] = least_confidence_score(pool_probs[i]);
  auto better = [&](std::size_t a, std::size_t b) {
    return score[a] != score[b] ? score[a] > score[b] : a < b;
  };
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(req.batch_size),
                    cand.end(), better);
  cand.resize(req.batch_size);
  std::sort(cand.begin(), cand.end());
  return cand;
}

inline std::vector<std::size_t> query_least_confidence(const QueryRequest& req, const Model* model,
                                                       std::span<const Sample> pool_samples) {
  if (!model) throw std::invalid_argument("least confidence requires a trained model");
  detail::check_request(req);
  // Only unlabeled items need scoring.
  const auto unl = req.pool->unlabeled();
  std::vector<Sample> batch;
  batch.reserve(unl.size());
  for (auto i : unl) batch.push_back(pool_samples[i]);
  const auto probs = model->predict_proba(batch);
  std::vector<ClassProbs> all(req.pool->size(), ClassProbs{0.0, 1.0});
  for (std::size_t k = 0; k < unl.size(); ++k) all[unl[k]] = probs[k];
  return query_least_confidence(req, all);
}

// ---------------------------------------------------------------------------
// GreedyCoreSet (k-center greedy)

/// Squared distance from every pool item to its nearest center, updated
/// incrementally as centers are added.
class CoresetDistances {
 public:
  explicit CoresetDistances(std::span<const DenseVector> embeddings)
      : emb_(embeddings), min_sq_(embeddings.size(), std::numeric_limits<double>::infinity()) {}

  void add_centers(std::span<const std::size_t> centers) {
    for (auto c : centers) {
      for (std::size_t i = 0; i < emb_.size(); ++i)
        min_sq_[i] = std::min(min_sq_[i], detail::squared_distance(emb_[i], emb_[c]));
      ++n_centers_;
    }
  }

  /// Takes over distances already updated for `centers` (all earlier centers
  /// plus these), as produced inside a core-set query.
  void absorb(std::span<const std::size_t> centers, std::vector<double> min_squared) {
    if (min_squared.size() != min_sq_.size()) throw std::invalid_argument("distance count mismatch");
    min_sq_ = std::move(min_squared);
    for (auto c : centers) min_sq_[c] = 0.0;
    n_centers_ += centers.size();
  }

  std::size_t center_count() const { return n_centers_; }
  const std::vector<double>& min_squared() const { return min_sq_; }

 private:
  std::span<const DenseVector> emb_;
  std::vector<double> min_sq_;
  std::size_t n_centers_ = 0;
};

struct CoresetOptions {
  /// Measure distance to labeled ∪ already-picked items (standard batch
  /// k-center). When false, distance is to the labeled set only.
  bool include_selected = true;
};

/// Repeatedly picks the unlabeled item farthest (Euclidean) from its nearest
/// center. `cache`, when given, must hold distances to exactly the labeled set
/// and is advanced to include the picks.
/// `pick_distances` receives the min-distance of each pick at pick time.
inline std::vector<std::size_t> query_greedy_coreset(const QueryRequest& req,
                                                     std::span<const DenseVector> embeddings,
                                                     CoresetOptions options = {},
                                                     CoresetDistances* cache = nullptr,
                                                     std::vector<double>* pick_distances = nullptr) {
  detail::check_request(req);
  const PoolState& pool = *req.pool;
  if (pool.labeled_count() == 0)
    throw std::invalid_argument("greedy core-set needs a non-empty labeled set");
  if (embeddings.size() != pool.size())
    throw std::invalid_argument("embedding count does not match pool size");

  std::vector<double> min_sq;
  if (cache) {
    if (cache->center_count() != pool.labeled_count())
      throw std::invalid_argument("core-set cache is out of date");
    min_sq = cache->min_squared();
  } else {
    CoresetDistances fresh(embeddings);
    fresh.add_centers(pool.labeled());
    min_sq = fresh.min_squared();
  }

  std::vector<std::size_t> cand = pool.unlabeled();
  std::vector<bool> taken(pool.size(), false);
  std::vector<std::size_t> picks;
  picks.reserve(req.batch_size);
  if (pick_distances) pick_distances->clear();
  for (std::size_t round = 0; round < req.batch_size; ++round) {
    std::size_t best = pool.size();
    double best_d = -1.0;
    for (auto i : cand)
      if (!taken[i] && min_sq[i] > best_d) {
        best_d = min_sq[i];
        best = i;
      }
    taken[best] = true;
    picks.push_back(best);
    if (pick_distances) pick_distances->push_back(std::sqrt(best_d));
    if (options.include_selected)
      for (auto i : cand)
        if (!taken[i])
          min_sq[i] = std::min(min_sq[i], detail::squared_distance(embeddings[i], embeddings[best]));
  }
  if (cache) {
    if (options.include_selected)
      cache->absorb(picks, std::move(min_sq));
    else
      cache->add_centers(picks);
  }
  std::sort(picks.begin(), picks.end());
  return picks;
}

// ---------------------------------------------------------------------------
// EmbeddingKMeans

struct KMeansOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;  // stop when no centroid moves farther than this
};

/// Clusters the unlabeled embeddings into k = batch_size groups (seeded
/// k-means++ then Lloyd) and takes the unclaimed item nearest to each centroid.
inline std::vector<std::size_t> query_embedding_kmeans(const QueryRequest& req,
                                                       std::span<const DenseVector> embeddings,
                                                       KMeansOptions options = {}) {
  detail::check_request(req);
  const PoolState& pool = *req.pool;
  if (embeddings.size() != pool.size())
    throw std::invalid_argument("embedding count does not match pool size");
  const auto items = pool.unlabeled();
  const std::size_t n = items.size();
  const std::size_t k = req.batch_size;
  const std::size_t dim = embeddings[items.front()].size();
  auto point = [&](std::size_t j) -> std::span<const double> { return embeddings[items[j]]; };

  Rng rng(derive_seed(req.rng_seed, "query/kmeans/" + std::to_string(pool.iteration())));

  // k-means++ initialization.
  std::vector<DenseVector> centroids;
  centroids.reserve(k);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(n, false);
  std::size_t first = static_cast<std::size_t>(uniform_index(rng, n));
  centroids.emplace_back(point(first).begin(), point(first).end());
  chosen[first] = true;
  while (centroids.size() < k) {
    const auto& last = centroids.back();
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      d2[j] = std::min(d2[j], detail::squared_distance(point(j), last));
      if (!chosen[j]) total += d2[j];
    }
    std::size_t next = n;
    if (total > 0.0) {
      const double target = uniform_unit(rng) * total;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (chosen[j]) continue;
        acc += d2[j];
        next = j;
        if (acc > target && d2[j] > 0.0) break;
      }
    } else {
      std::vector<std::size_t> rest;
      for (std::size_t j = 0; j < n; ++j)
        if (!chosen[j]) rest.push_back(j);
      next = rest[static_cast<std::size_t>(uniform_index(rng, rest.size()))];
    }
    chosen[next] = true;
    centroids.emplace_back(point(next).begin(), point(next).end());
  }

  // Lloyd iterations with Elkan's bounds. Assignments equal a full argmin
  // over every centroid (first index on ties): a distance is skipped only when
  // the bounds prove it strictly larger than the assigned one, with margins
  // wide enough to cover rounding in the computed distances.
  std::vector<double> flat(n * dim);
  for (std::size_t j = 0; j < n; ++j) std::copy(point(j).begin(), point(j).end(), flat.begin() + j * dim);
  constexpr double kRel = 1e-12;  // >> dim * epsilon for any realistic dim
  const double up = 1.0 + kRel, down = 1.0 - kRel, strict = 1.0 + 4 * kRel;
  std::vector<std::size_t> assign(n, 0);
  std::vector<double> upper(n), assigned_sq(n), lower(n * k), half_gap(k), shift(k), center_gap(k * k);
  std::vector<bool> tight(n, true);
  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    const auto ct = detail::transpose_centroids(centroids, dim);
    if (iter == 0) {
      for (std::size_t j = 0; j < n; ++j) {
        double* row = &lower[j * k];
        detail::distance_row(&flat[j * dim], ct, dim, k, row);
        const auto best = static_cast<std::size_t>(std::min_element(row, row + k) - row);
        assign[j] = best;
        assigned_sq[j] = row[best];
        upper[j] = std::sqrt(row[best]) * up;
        for (std::size_t c = 0; c < k; ++c) row[c] = std::sqrt(row[c]) * down;
      }
    } else {
      for (std::size_t c = 0; c < k; ++c) {
        double nearest = std::numeric_limits<double>::infinity();
        for (std::size_t o = 0; o < k; ++o) {
          if (o == c) continue;
          const double g = std::sqrt(detail::squared_distance(centroids[c], centroids[o])) * down;
          center_gap[c * k + o] = g;
          nearest = std::min(nearest, g);
        }
        half_gap[c] = 0.5 * nearest * down;
      }
      for (std::size_t j = 0; j < n; ++j) {
        std::size_t a = assign[j];
        if (upper[j] * strict < half_gap[a]) continue;
        double* lo = &lower[j * k];
        for (std::size_t c = 0; c < k; ++c) {
          if (c == a) continue;
          auto excluded = [&] {
            return upper[j] * strict < lo[c] || upper[j] * strict < 0.5 * center_gap[a * k + c] * down;
          };
          if (excluded()) continue;
          if (!tight[j]) {
            assigned_sq[j] = detail::squared_distance(point(j), centroids[a]);
            upper[j] = std::sqrt(assigned_sq[j]) * up;
            lo[a] = std::sqrt(assigned_sq[j]) * down;
            tight[j] = true;
            if (excluded()) continue;
          }
          const double d = detail::squared_distance(point(j), centroids[c]);
          lo[c] = std::sqrt(d) * down;
          if (d < assigned_sq[j] || (d == assigned_sq[j] && c < a)) {
            a = c;
            assigned_sq[j] = d;
            upper[j] = std::sqrt(d) * up;
          }
        }
        assign[j] = a;
      }
    }
    std::vector<DenseVector> sums(k, DenseVector(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t j = 0; j < n; ++j) {
      auto p = point(j);
      auto& s = sums[assign[j]];
      for (std::size_t d = 0; d < dim; ++d) s[d] += p[d];
      ++counts[assign[j]];
    }
    double max_shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      shift[c] = 0.0;
      if (counts[c] == 0) continue;  // empty cluster keeps its centroid
      for (auto& v : sums[c]) v /= double(counts[c]);
      const double moved = std::sqrt(detail::squared_distance(sums[c], centroids[c]));
      max_shift = std::max(max_shift, moved);
      shift[c] = moved * up;
      centroids[c] = std::move(sums[c]);
    }
    if (max_shift < options.tolerance) break;
    for (std::size_t j = 0; j < n; ++j) {
      double* lo = &lower[j * k];
      for (std::size_t c = 0; c < k; ++c) lo[c] = std::max(0.0, (lo[c] - shift[c]) * down);
      if (shift[assign[j]] > 0.0) {
        upper[j] = (upper[j] + shift[assign[j]]) * up;
        tight[j] = false;
      }
    }
  }

  std::vector<double> dist(n * k);
  // Nearest unclaimed item per centroid, centroids in order, ties to the lower id.
  detail::all_squared_distances(flat, centroids, dim, dist);
  std::vector<bool> claimed(n, false);
  std::vector<std::size_t> picks;
  picks.reserve(k);
  for (std::size_t c = 0; c < k; ++c) {
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (claimed[j]) continue;
      const double d = dist[j * k + c];
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    claimed[best] = true;
    picks.push_back(items[best]);
  }
  std::sort(picks.begin(), picks.end());
  return picks;
}

}  // namespace alsim
