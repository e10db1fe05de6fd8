#pragma once

// Classifier contract (from-scratch fit, class probabilities, embeddings) and
// the built-in linear learner.

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "alsim/common.hpp"
#include "alsim/features.hpp"
#include "json.hpp"

namespace alsim {

enum class Backend { kBuiltinLinear, kExternalPlugin };
enum class Loss { kLogistic, kHinge };

inline std::string_view to_string(Backend b) {
  return b == Backend::kBuiltinLinear ? "builtin-linear" : "external-plugin";
}
inline std::string_view to_string(Loss l) { return l == Loss::kLogistic ? "logistic" : "hinge"; }

struct ClassifierSpec {
  std::string name = "linear";  // label used in output paths and summaries
  Backend backend = Backend::kBuiltinLinear;
  Loss loss = Loss::kLogistic;
  double l2 = 1e-6;
  std::size_t epochs = 20;
  double learning_rate = 0.1;  // initial rate, decayed as lr / (1 + lr * l2 * t)
  double validation_fraction = 0.0;
  bool early_stopping = false;
  std::uint64_t seed = 0;
  std::vector<std::string> plugin_command;  // argv for the external backend
  nlohmann::json plugin_options = nlohmann::json::object();

  void validate() const {
    if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5))
      throw std::invalid_argument("validation_fraction must lie in [0, 0.5]");
    if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be positive");
    if (!(l2 >= 0.0) || learning_rate * l2 >= 1.0)
      throw std::invalid_argument("l2 must be >= 0 with learning_rate * l2 < 1");
    if (backend == Backend::kExternalPlugin && plugin_command.empty())
      throw std::invalid_argument("external-plugin backend needs plugin_command");
  }

  nlohmann::json to_json() const {
    return {{"name", name},
            {"backend", to_string(backend)},
            {"loss", to_string(loss)},
            {"l2", l2},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"validation_fraction", validation_fraction},
            {"early_stopping", early_stopping},
            {"seed", seed},
            {"plugin_command", plugin_command},
            {"plugin_options", plugin_options}};
  }

  static ClassifierSpec from_json(const nlohmann::json& j) {
    ClassifierSpec s;
    s.name = j.value("name", s.name);
    const auto backend = j.value("backend", std::string("builtin-linear"));
    if (backend == "builtin-linear")
      s.backend = Backend::kBuiltinLinear;
    else if (backend == "external-plugin")
      s.backend = Backend::kExternalPlugin;
    else
      throw std::invalid_argument("unknown classifier backend: " + backend);
    const auto loss = j.value("loss", std::string("logistic"));
    if (loss == "logistic")
      s.loss = Loss::kLogistic;
    else if (loss == "hinge")
      s.loss = Loss::kHinge;
    else
      throw std::invalid_argument("unknown loss: " + loss);
    s.l2 = j.value("l2", s.l2);
    s.epochs = j.value("epochs", s.epochs);
    s.learning_rate = j.value("learning_rate", s.learning_rate);
    s.validation_fraction = j.value("validation_fraction", s.validation_fraction);
    s.early_stopping = j.value("early_stopping", s.early_stopping);
    s.seed = j.value("seed", s.seed);
    if (j.contains("plugin_command"))
      s.plugin_command = j.at("plugin_command").get<std::vector<std::string>>();
    if (j.contains("plugin_options")) s.plugin_options = j.at("plugin_options");
    s.validate();
    return s;
  }
};

/// The labeled set holds a single class; a binary model cannot be fitted.
class SingleClassError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One item as seen by a classifier: its text for text-based backends, its
/// TF-IDF vector for the builtin one.
struct Sample {
  DocId id = 0;
  std::string_view text;
  const SparseVector* features = nullptr;
};

/// Order-independent hash of a labeled set.
inline std::uint64_t training_fingerprint(std::span<const Sample> samples,
                                          std::span<const Label> labels) {
  std::vector<std::pair<DocId, Label>> items;
  items.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) items.emplace_back(samples[i].id, labels[i]);
  std::sort(items.begin(), items.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto [id, y] : items) h = fnv1a(std::to_string(id) + ":" + std::to_string(int(y)) + ";", h);
  return h;
}

class Model {
 public:
  virtual ~Model() = default;
  virtual std::vector<ClassProbs> predict_proba(std::span<const Sample> samples) const = 0;
  virtual std::uint64_t fingerprint() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

class Learner {
 public:
  virtual ~Learner() = default;
  /// Trains a fresh model on exactly `labeled` (no warm start). `batch_sizes`
  /// gives the acquisition batches in order, for per-batch validation holdout.
  virtual std::shared_ptr<const Model> fit(std::span<const Sample> labeled,
                                           std::span<const Label> labels,
                                           std::span<const std::size_t> batch_sizes,
                                           const Vocabulary& features) = 0;
  virtual std::vector<DenseVector> embed(std::span<const Sample> samples) = 0;
  virtual std::size_t embedding_dim() const = 0;
  virtual const ClassifierSpec& spec() const = 0;
};

// ---------------------------------------------------------------------------
// Builtin linear model

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(1 + exp(-z)) without overflow.
inline double log1p_exp_neg(double z) {
  return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

class LinearModel final : public Model {
 public:
  LinearModel(std::vector<double> weights, double bias, Loss loss, std::uint64_t fingerprint,
              std::uint64_t vocab_hash)
      : weights_(std::move(weights)),
        bias_(bias),
        loss_(loss),
        fingerprint_(fingerprint),
        vocab_hash_(vocab_hash) {
    for (double w : weights_)
      if (!std::isfinite(w)) throw std::runtime_error("non-finite weight");
    if (!std::isfinite(bias_)) throw std::runtime_error("non-finite bias");
  }

  const std::vector<double>& weights() const { return weights_; }
  double bias() const { return bias_; }
  Loss loss() const { return loss_; }
  std::uint64_t vocab_hash() const { return vocab_hash_; }
  std::uint64_t fingerprint() const override { return fingerprint_; }

  double margin(const SparseVector& x) const {
    if (x.dimension != weights_.size())
      throw std::invalid_argument("feature dimension " + std::to_string(x.dimension) +
                                  " does not match model dimension " +
                                  std::to_string(weights_.size()));
    return x.dot(weights_) + bias_;
  }

  /// p1 = sigmoid(margin); for hinge-trained models the margin is squashed the same way.
  ClassProbs proba(const SparseVector& x) const {
    const double p1 = sigmoid(margin(x));
    return {1.0 - p1, p1};
  }

  std::vector<ClassProbs> predict_proba(std::span<const Sample> samples) const override {
    std::vector<ClassProbs> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
      if (!s.features) throw std::invalid_argument("builtin model needs feature vectors");
      out.push_back(proba(*s.features));
    }
    return out;
  }

  nlohmann::json to_json() const override {
    return {{"weights", weights_},
            {"bias", bias_},
            {"loss", to_string(loss_)},
            {"fingerprint", std::to_string(fingerprint_)},
            {"vocab_hash", std::to_string(vocab_hash_)}};
  }

  static LinearModel from_json(const nlohmann::json& j) {
    return LinearModel(j.at("weights").get<std::vector<double>>(), j.at("bias").get<double>(),
                       j.at("loss").get<std::string>() == "hinge" ? Loss::kHinge : Loss::kLogistic,
                       std::stoull(j.at("fingerprint").get<std::string>()),
                       std::stoull(j.at("vocab_hash").get<std::string>()));
  }

 private:
  std::vector<double> weights_;
  double bias_;
  Loss loss_;
  std::uint64_t fingerprint_;
  std::uint64_t vocab_hash_;
};

// ---------------------------------------------------------------------------
// Full-batch regularized logistic objective
//   J(w, b) = (1/n) sum_i log(1 + exp(-s_i (w.x_i + b))) + (l2/2) |w|^2,  s_i = +-1
// SGD below takes unbiased stochastic steps on this objective.

inline double logistic_objective(std::span<const double> weights, double bias,
                                 std::span<const SparseVector> xs, std::span<const Label> ys,
                                 double l2) {
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double m = xs[i].dot(weights) + bias;
    loss += log1p_exp_neg(ys[i] == kAbuse ? m : -m);
  }
  double reg = 0.0;
  for (double w : weights) reg += w * w;
  return loss / double(xs.size()) + 0.5 * l2 * reg;
}

struct Gradient {
  std::vector<double> weights;
  double bias = 0.0;
};

inline Gradient logistic_gradient(std::span<const double> weights, double bias,
                                  std::span<const SparseVector> xs, std::span<const Label> ys,
                                  double l2) {
  Gradient g;
  g.weights.assign(weights.size(), 0.0);
  const double inv_n = 1.0 / double(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double residual = sigmoid(xs[i].dot(weights) + bias) - double(ys[i]);
    for (std::size_t k = 0; k < xs[i].indices.size(); ++k)
      g.weights[xs[i].indices[k]] += residual * xs[i].values[k] * inv_n;
    g.bias += residual * inv_n;
  }
  for (std::size_t j = 0; j < weights.size(); ++j) g.weights[j] += l2 * weights[j];
  return g;
}

// ---------------------------------------------------------------------------
// SGD training

namespace detail {

// Weight vector stored as scale * v so that L2 shrinkage costs O(1) per step.
class ScaledWeights {
 public:
  explicit ScaledWeights(std::size_t dim) : v_(dim, 0.0) {}

  double dot(const SparseVector& x) const { return scale_ * x.dot(v_); }

  void shrink(double factor) {
    scale_ *= factor;
    if (scale_ < 1e-9) {
      for (auto& w : v_) w *= scale_;
      scale_ = 1.0;
    }
  }

  void add(const SparseVector& x, double coef) {
    const double c = coef / scale_;
    for (std::size_t k = 0; k < x.indices.size(); ++k) v_[x.indices[k]] += c * x.values[k];
  }

  std::vector<double> materialize() const {
    std::vector<double> w(v_);
    for (auto& x : w) x *= scale_;
    return w;
  }

 private:
  std::vector<double> v_;
  double scale_ = 1.0;
};

inline double validation_log_loss(const std::vector<double>& w, double b,
                                  std::span<const SparseVector* const> xs,
                                  std::span<const Label> ys) {
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double m = xs[i]->dot(w) + b;
    loss += log1p_exp_neg(ys[i] == kAbuse ? m : -m);
  }
  return loss / double(xs.size());
}

}  // namespace detail

/// Fits a linear model from scratch by seeded SGD.
///
/// Training order is canonicalized by document id before shuffling, so the
/// result depends only on (spec, labeled set), never on acquisition order.
/// With early stopping enabled, the last `validation_fraction` of each batch
/// is held out and the best epoch by validation log loss is kept (patience 1).
inline LinearModel fit_linear(const ClassifierSpec& spec, std::span<const Sample> samples,
                              std::span<const Label> labels, std::size_t dim,
                              std::span<const std::size_t> batch_sizes = {},
                              std::uint64_t vocab_hash = 0) {
  spec.validate();
  if (samples.size() != labels.size()) throw std::invalid_argument("samples/labels size mismatch");
  if (samples.empty()) throw std::invalid_argument("cannot fit on an empty labeled set");
  const auto n_pos = std::count(labels.begin(), labels.end(), kAbuse);
  if (n_pos == 0 || n_pos == static_cast<std::ptrdiff_t>(labels.size()))
    throw SingleClassError("labeled set contains a single class");
  for (const auto& s : samples) {
    if (!s.features) throw std::invalid_argument("builtin learner needs feature vectors");
    if (s.features->dimension != dim) throw std::invalid_argument("feature dimension mismatch");
  }

  // Holdout selection happens on acquisition order, before canonical sorting.
  std::vector<bool> held_out(samples.size(), false);
  if (spec.early_stopping && spec.validation_fraction > 0.0) {
    std::vector<std::size_t> batches(batch_sizes.begin(), batch_sizes.end());
    if (batches.empty() ||
        std::accumulate(batches.begin(), batches.end(), std::size_t{0}) != samples.size())
      batches = {samples.size()};
    std::size_t start = 0;
    for (auto b : batches) {
      const auto k = static_cast<std::size_t>(std::floor(spec.validation_fraction * double(b)));
      for (std::size_t i = start + b - k; i < start + b; ++i) held_out[i] = true;
      start += b;
    }
    std::ptrdiff_t tr_pos = 0, tr_n = 0;
    for (std::size_t i = 0; i < samples.size(); ++i)
      if (!held_out[i]) {
        ++tr_n;
        tr_pos += labels[i] == kAbuse;
      }
    if (tr_pos == 0 || tr_pos == tr_n) std::fill(held_out.begin(), held_out.end(), false);
  }

  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < samples.size(); ++i) (held_out[i] ? val_idx : train_idx).push_back(i);
  auto by_id = [&](std::size_t a, std::size_t b) { return samples[a].id < samples[b].id; };
  std::sort(train_idx.begin(), train_idx.end(), by_id);
  std::sort(val_idx.begin(), val_idx.end(), by_id);

  std::vector<const SparseVector*> val_x;
  std::vector<Label> val_y;
  for (auto i : val_idx) {
    val_x.push_back(samples[i].features);
    val_y.push_back(labels[i]);
  }

  Rng rng(derive_seed(spec.seed, "sgd"));
  detail::ScaledWeights w(dim);
  double b = 0.0;
  std::uint64_t t = 0;
  std::vector<double> best_w;
  double best_b = 0.0;
  double best_loss = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order = train_idx;

  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    shuffle(order, rng);
    for (auto i : order) {
      const double eta = spec.learning_rate / (1.0 + spec.learning_rate * spec.l2 * double(t));
      ++t;
      const SparseVector& x = *samples[i].features;
      const double m = w.dot(x) + b;
      double g;  // d loss / d margin
      if (spec.loss == Loss::kLogistic) {
        g = sigmoid(m) - double(labels[i]);
      } else {
        const double s = labels[i] == kAbuse ? 1.0 : -1.0;
        g = s * m < 1.0 ? -s : 0.0;
      }
      w.shrink(1.0 - eta * spec.l2);
      if (g != 0.0) {
        w.add(x, -eta * g);
        b -= eta * g;
      }
    }
    if (!val_x.empty()) {
      auto cur = w.materialize();
      const double vl = detail::validation_log_loss(cur, b, val_x, val_y);
      if (vl < best_loss) {
        best_loss = vl;
        best_w = std::move(cur);
        best_b = b;
      } else {
        break;
      }
    }
  }

  const auto fp = training_fingerprint(samples, labels);
  if (!val_x.empty()) return LinearModel(std::move(best_w), best_b, spec.loss, fp, vocab_hash);
  return LinearModel(w.materialize(), b, spec.loss, fp, vocab_hash);
}

/// Builtin learner: linear model over TF-IDF; embeddings are seeded random
/// projections of the TF-IDF vectors.
class LinearLearner final : public Learner {
 public:
  LinearLearner(ClassifierSpec spec, std::size_t embedding_dim = 256,
                std::uint64_t projection_seed = 0)
      : spec_(std::move(spec)), projection_(embedding_dim, projection_seed) {
    spec_.validate();
  }

  std::shared_ptr<const Model> fit(std::span<const Sample> labeled, std::span<const Label> labels,
                                   std::span<const std::size_t> batch_sizes,
                                   const Vocabulary& features) override {
    return std::make_shared<LinearModel>(
        fit_linear(spec_, labeled, labels, features.size(), batch_sizes, features.fingerprint()));
  }

  std::vector<DenseVector> embed(std::span<const Sample> samples) override {
    std::vector<DenseVector> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
      if (!s.features) throw std::invalid_argument("builtin embed needs feature vectors");
      out.push_back(projection_.project(*s.features));
    }
    return out;
  }

  std::size_t embedding_dim() const override { return projection_.output_dim(); }
  const ClassifierSpec& spec() const override { return spec_; }

 private:
  ClassifierSpec spec_;
  RandomProjection projection_;
};

}  // namespace alsim
