// End-to-end acceptance checks. One line per criterion:
//   PASS|FAIL|SKIP  <name>: <detail>
// Exit status is 1 when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "alsim/plugin.hpp"
#include "alsim/runner.hpp"

using namespace alsim;
using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool ok = true;
  std::string detail;
};

int g_failures = 0;

void report(const std::string& name, const Outcome& o) {
  std::cout << (o.ok ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  if (!o.ok) ++g_failures;
}

void skip(const std::string& name, const std::string& why) {
  std::cout << "SKIP " << name << ": " << why << std::endl;
}

// Runs a check, turning any escaping exception into a failure.
template <class F>
void check(const std::string& name, F&& f) {
  Outcome o;
  try {
    o = f();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(name, o);
}

std::string fixed(double v, int digits = 3) { return format_fixed(v, digits); }

struct ScratchDir {
  fs::path path;
  explicit ScratchDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("alsim-acceptance-" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::map<std::string, std::string> curve_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().filename() == "curve.jsonl")
      out[fs::relative(e.path(), root).string()] = read_text_file(e.path());
  return out;
}

// ---------------------------------------------------------------------------
// Reference synthetic grid: two linear classifiers x {LC, random} x three
// imbalances x three seeds on a 20,000-document pool.

json reference_grid(const fs::path& out) {
  return {{"grid",
           {{"classifiers",
             json::array({{{"name", "logreg"}}, {{"name", "svm"}, {"loss", "hinge"}}})}}},
          {"output_dir", out.string()}};
}

struct GridRun {
  std::vector<ExperimentSummary> results;
  std::map<std::string, std::string> curves;
  double max_run_seconds = 0.0;
  std::size_t runs = 0;
  double total_seconds = 0.0;
};

GridRun run_reference(const fs::path& dir) {
  GridRun g;
  const auto t0 = Clock::now();
  g.results = run_grid(grid_from_json(reference_grid(dir)));
  g.total_seconds = since(t0);
  g.curves = curve_files(dir);
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() == "manifest.json") {
      const auto m = json::parse(read_text_file(e.path()));
      g.max_run_seconds = std::max(g.max_run_seconds, m["wall_time_seconds"].get<double>());
      ++g.runs;
    }
  return g;
}

const ExperimentSummary* find(const std::vector<ExperimentSummary>& rs, const std::string& clf,
                              const std::string& query, double imbalance) {
  for (const auto& e : rs)
    if (e.config["classifier"]["name"] == clf && e.config["query_strategy"] == query &&
        e.config["imbalance"].get<double>() == imbalance)
      return &e;
  return nullptr;
}

// ---------------------------------------------------------------------------
// Pool invariants

Outcome pool_invariants() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  const auto kw = default_keywords();
  std::map<double, PreparedDataset> data;
  for (double imb : {0.05, 0.1, 0.3, 0.5}) {
    SyntheticSpec spec;
    spec.size = 3000;
    spec.imbalance = 0.5;
    spec.seed = 17;
    data.emplace(imb, prepare_dataset(rebalance(generate_synthetic_corpus(spec, kw), imb, 700, 300, 3),
                                      "synthetic"));
  }
  const QueryStrategy strategies[] = {QueryStrategy::kRandom, QueryStrategy::kLeastConfidence,
                                      QueryStrategy::kGreedyCoreSet, QueryStrategy::kEmbeddingKMeans};
  std::size_t iterations = 0, failed_runs = 0, violations = 0;
  std::string first_violation;
  auto violate = [&](const std::string& what) {
    if (violations++ == 0) first_violation = what;
  };
  for (int run = 0; run < 100; ++run) {
    ExperimentConfig c;
    c.imbalance = std::vector<double>{0.05, 0.1, 0.3, 0.5}[rng() % 4];
    c.query = strategies[rng() % 4];
    c.cold = rng() % 2 ? ColdStrategy::kRandom : ColdStrategy::kHeuristic;
    c.seed_size = 2 * (1 + rng() % 15);
    c.batch_size = 1 + rng() % 60;
    c.budget = c.seed_size + rng() % 250;
    c.embedding_dim = 16;
    const auto& d = data.at(c.imbalance);
    const std::set<DocId> test_ids(d.test_ids.begin(), d.test_ids.end());
    std::vector<std::size_t> expected = {c.seed_size};
    for (std::size_t total = c.seed_size; total < c.budget;) {
      expected.push_back(std::min(c.batch_size, c.budget - total));
      total += expected.back();
    }
    std::size_t iter = 0;
    const auto curve = run_active_learning(c, rng(), d, kw, [&](const IterationView& v) {
      ++iter;
      ++iterations;
      const auto& labeled = v.pool.labeled();
      const auto unlabeled = v.pool.unlabeled();
      const std::set<std::size_t> l(labeled.begin(), labeled.end());
      if (l.size() != labeled.size()) violate("duplicate labeled item");
      if (labeled.size() + unlabeled.size() != d.pool_ids.size()) violate("partition does not cover pool");
      for (auto i : unlabeled)
        if (l.count(i)) violate("item both labeled and unlabeled");
      std::size_t abuse = 0;
      for (auto i : labeled) {
        if (v.pool.label(i) != d.pool_labels[i]) violate("revealed label differs from gold");
        if (test_ids.count(d.pool_ids[i])) violate("test document in pool");
        abuse += d.pool_labels[i] == kAbuse;
      }
      if (abuse != v.point.labeled_abuse) violate("labeled abuse count mismatch");
      const std::vector<std::size_t> want(expected.begin(), expected.begin() + std::ptrdiff_t(iter));
      if (v.pool.batch_sizes() != want) violate("batch sizes differ from schedule");
    });
    if (curve.failed) {
      ++failed_runs;
      if (iter != 0) violate("failed run reported iterations");
    } else if (iter != expected.size() || curve.points.size() != expected.size()) {
      violate("wrong number of iterations");
    }
  }
  const double secs = since(t0);
  std::ostringstream s;
  s << "100 runs, " << iterations << " iterations checked, " << failed_runs
    << " single-class seeds, " << violations << " violations, " << fixed(secs, 1) << "s";
  if (violations) s << " (first: " << first_violation << ")";
  return {violations == 0 && secs < 60.0, s.str()};
}

// ---------------------------------------------------------------------------
// Oracles

std::vector<std::size_t> exhaustive_coreset(const PoolState& pool, const std::vector<DenseVector>& emb,
                                            std::size_t batch) {
  std::vector<std::size_t> centers = pool.labeled(), picks;
  for (std::size_t r = 0; r < batch; ++r) {
    std::size_t best = 0;
    double best_d = -1.0;
    for (auto i : pool.unlabeled()) {
      if (std::find(picks.begin(), picks.end(), i) != picks.end()) continue;
      double d = std::numeric_limits<double>::infinity();
      for (auto c : centers) {
        double s = 0.0;
        for (std::size_t k = 0; k < emb[i].size(); ++k) s += (emb[i][k] - emb[c][k]) * (emb[i][k] - emb[c][k]);
        d = std::min(d, std::sqrt(s));
      }
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picks.push_back(best);
    centers.push_back(best);
  }
  std::sort(picks.begin(), picks.end());
  return picks;
}

Outcome oracles() {
  std::mt19937_64 rng(99);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> u;
  std::size_t mismatches[4] = {0, 0, 0, 0};

  // (a) greedy core-set vs exhaustive greedy, pools of at most 20 points.
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 3 + rng() % 18, dim = 1 + rng() % 5;
    std::vector<DenseVector> emb(n, DenseVector(dim));
    for (auto& v : emb)
      for (auto& x : v) x = g(rng);
    std::vector<Label> gold(n, kNonAbuse);
    PoolState p(gold);
    p.reveal(seed_random(p, 1 + rng() % (n / 2), rng()));
    const std::size_t batch = 1 + rng() % p.unlabeled_count();
    if (query_greedy_coreset({&p, batch, QueryStrategy::kGreedyCoreSet, 0}, emb) !=
        exhaustive_coreset(p, emb, batch))
      ++mismatches[0];
  }

  // (b) N_90 vs a brute-force scan.
  for (int t = 0; t < 1000; ++t) {
    std::vector<CurvePoint> curve;
    for (std::size_t i = 0; i < 1 + rng() % 41; ++i) {
      CurvePoint p;
      p.labeled_count = 20 + 50 * i;
      p.macro_f1 = std::round(u(rng) * 100) / 100;
      curve.push_back(p);
    }
    const double ref = std::round((0.4 + 0.6 * u(rng)) * 100) / 100;
    std::optional<std::size_t> want;
    for (const auto& p : curve)
      if (p.macro_f1 >= 0.9 * ref) {
        want = p.labeled_count;
        break;
      }
    if (compute_n90(curve, ref) != want) ++mismatches[1];
  }

  // (c) least confidence vs full sort-and-take on 1,000-item pools.
  for (int t = 0; t < 100; ++t) {
    std::vector<Label> gold(1000, kNonAbuse);
    PoolState p(gold);
    p.reveal(seed_random(p, 20, rng()));
    std::vector<ClassProbs> probs(1000);
    for (auto& q : probs) {
      const double p1 = t % 2 ? std::round(u(rng) * 40) / 40 : u(rng);
      q = {1.0 - p1, p1};
    }
    const std::size_t batch = 1 + rng() % 200;
    auto cand = p.unlabeled();
    std::stable_sort(cand.begin(), cand.end(), [&](auto a, auto b) {
      return 1.0 - std::max(probs[a][0], probs[a][1]) > 1.0 - std::max(probs[b][0], probs[b][1]);
    });
    cand.resize(batch);
    std::sort(cand.begin(), cand.end());
    if (query_least_confidence({&p, batch, QueryStrategy::kLeastConfidence, 0}, probs) != cand)
      ++mismatches[2];
  }

  // (d) hand-computed metric values.
  struct Hand {
    ConfusionCounts c;
    double f1;
    std::optional<double> fpr, fnr;
  };
  const Hand hand[] = {
      {{.tp = 40, .fp = 20, .tn = 30, .fn = 10}, (80.0 / 110.0 + 60.0 / 90.0) / 2, 20.0 / 50.0, 10.0 / 50.0},
      {{.tp = 5, .fp = 0, .tn = 95, .fn = 0}, 1.0, 0.0, 0.0},
      {{.tp = 0, .fp = 0, .tn = 90, .fn = 10}, (0.0 + 180.0 / 190.0) / 2, 0.0, 1.0},
      {{.tp = 3, .fp = 7, .tn = 0, .fn = 0}, (6.0 / 13.0 + 0.0) / 2, 1.0, 0.0},
      {{.tp = 0, .fp = 0, .tn = 12, .fn = 0}, 0.5, 0.0, std::nullopt},
  };
  for (const auto& h : hand) {
    const auto r = fpr_fnr(h.c);
    auto close = [](std::optional<double> a, std::optional<double> b) {
      return a.has_value() == b.has_value() && (!a || std::abs(*a - *b) <= 1e-9);
    };
    if (std::abs(macro_f1(h.c) - h.f1) > 1e-9 || !close(r.fpr, h.fpr) || !close(r.fnr, h.fnr))
      ++mismatches[3];
  }
  const bool f1_case = std::abs(macro_f1(hand[0].c) - 0.6970) < 5e-5;

  std::ostringstream s;
  s << "coreset " << 100 - mismatches[0] << "/100, N_90 " << 1000 - mismatches[1]
    << "/1000, least-confidence " << 100 - mismatches[2] << "/100 pools of 1000, metrics "
    << std::size(hand) - mismatches[3] << "/" << std::size(hand) << " (40/20/30/10 -> "
    << fixed(macro_f1(hand[0].c), 4) << ")";
  return {!mismatches[0] && !mismatches[1] && !mismatches[2] && !mismatches[3] && f1_case, s.str()};
}

// ---------------------------------------------------------------------------
// Gradient check

Outcome gradient_check() {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g;
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t dim = 2 + rng() % 8, n = 3 + rng() % 12;
    std::vector<SparseVector> xs;
    std::vector<Label> ys;
    for (std::size_t i = 0; i < n; ++i) {
      SparseVector x;
      x.dimension = dim;
      for (std::uint32_t j = 0; j < dim; ++j)
        if (rng() % 2) {
          x.indices.push_back(j);
          x.values.push_back(g(rng));
        }
      xs.push_back(x);
      ys.push_back(rng() % 2 ? kAbuse : kNonAbuse);
    }
    std::vector<double> w(dim);
    for (auto& v : w) v = g(rng);
    const double b = g(rng), l2 = 0.05 * double(rng() % 5);
    const auto grad = logistic_gradient(w, b, xs, ys, l2);
    const double h = 1e-5;
    auto rel = [](double a, double num) {
      return std::abs(a - num) / std::max(1e-8, std::abs(a) + std::abs(num));
    };
    for (std::size_t j = 0; j < dim; ++j) {
      auto wp = w, wm = w;
      wp[j] += h;
      wm[j] -= h;
      const double num = (logistic_objective(wp, b, xs, ys, l2) - logistic_objective(wm, b, xs, ys, l2)) / (2 * h);
      worst = std::max(worst, rel(grad.weights[j], num));
    }
    const double num_b =
        (logistic_objective(w, b + h, xs, ys, l2) - logistic_objective(w, b - h, xs, ys, l2)) / (2 * h);
    worst = std::max(worst, rel(grad.bias, num_b));
  }
  return {worst < 1e-5, "50 instances, worst relative error " + format_double(worst)};
}

// ---------------------------------------------------------------------------
// Rebalancing

std::vector<Document> labeled_docs(std::size_t pos, std::size_t neg, DocId first = 0) {
  std::vector<Document> out;
  for (std::size_t i = 0; i < pos + neg; ++i) {
    Document d;
    d.id = first + DocId(i);
    d.text = "doc " + std::to_string(i);
    d.label = i < pos ? kAbuse : kNonAbuse;
    out.push_back(std::move(d));
  }
  return out;
}

Outcome rebalancing() {
  auto abuse = [](const std::vector<Document>& ds) {
    std::size_t n = 0;
    for (const auto& d : ds) n += d.label == kAbuse;
    return n;
  };
  std::ostringstream s;
  bool ok = true;
  // Any source that meets the preconditions gives the same counts.
  for (auto [pos, neg] : {std::pair<std::size_t, std::size_t>{1250, 23750}, {5000, 60000}, {30000, 30000}}) {
    const auto r = rebalance(labeled_docs(pos, neg), 0.05, 20000, 5000, 1);
    const std::size_t tp = abuse(r.train), te = abuse(r.test);
    ok = ok && tp == 1000 && r.train.size() - tp == 19000 && te == 250 && r.test.size() - te == 4750;
    if (pos == 5000)
      s << "5% pool 20000: train " << tp << "/" << r.train.size() - tp << ", test " << te << "/"
        << r.test.size() - te;
  }
  const auto synth = DatasetSource{};
  const auto docs = load_source(synth, default_keywords());
  const auto r = rebalance_source(synth, docs, 0.05);
  ok = ok && abuse(r.train) == 1000 && abuse(r.test) == 250 && r.train.size() == 20000 && r.test.size() == 5000;

  std::size_t max_pool = 0;
  try {
    rebalance_presplit(labeled_docs(10834, 81852), labeled_docs(3000, 30000, 1000000), 0.5, 25000, 5000, 1);
  } catch (const InsufficientDataError& e) {
    max_pool = e.max_pool_size();
  }
  ok = ok && max_pool == 21668;
  s << "; overflow at 10834/81852 abusive/non-abusive reports max pool " << max_pool;
  return {ok, s.str()};
}

// ---------------------------------------------------------------------------
// Directional findings on the reference grid plus cold-start statistics

Outcome n90_direction(const GridRun& g, double imbalance) {
  std::ostringstream s;
  bool ok = true;
  for (const std::string clf : {"logreg", "svm"}) {
    const auto* lc = find(g.results, clf, "least_confidence", imbalance);
    const auto* rnd = find(g.results, clf, "random", imbalance);
    if (!lc || !rnd || !lc->summary.f1_ref) return {false, "missing grid results"};
    int wins = 0;
    std::string per_seed;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto a = i < lc->summary.n90_per_run.size() ? lc->summary.n90_per_run[i] : std::nullopt;
      const auto b = i < rnd->summary.n90_per_run.size() ? rnd->summary.n90_per_run[i] : std::nullopt;
      // "Not reached" is worse than any count; two misses are not a win.
      wins += a && (!b || *a <= *b);
      per_seed += (i ? " " : "") + (a ? std::to_string(*a) : std::string("-")) + "/" +
                  (b ? std::to_string(*b) : std::string("-"));
    }
    ok = ok && wins >= 2;
    s << clf << " " << wins << "/3 seeds (LC/random N_90: " << per_seed << ") ";
  }
  return {ok, s.str()};
}

Outcome abuse_fraction(const GridRun& g) {
  std::ostringstream s;
  bool ok = true;
  double worst_random = 0.0, min_lc_margin = 1.0;
  for (double imb : {0.5, 0.1, 0.05})
    for (const std::string clf : {"logreg", "svm"}) {
      const auto* rnd = find(g.results, clf, "random", imb);
      const auto* lc = find(g.results, clf, "least_confidence", imb);
      if (!rnd || !lc) return {false, "missing grid results"};
      for (const auto& r : rnd->runs)
        worst_random = std::max(worst_random, std::abs(r.points.back().abuse_fraction() - imb));
      // The direction only makes sense on skewed pools.
      if (imb == 0.5) continue;
      for (const auto& r : lc->runs) {
        const double margin = r.points.back().abuse_fraction() - imb;
        min_lc_margin = std::min(min_lc_margin, margin);
        ok = ok && margin > 0.0;
      }
    }
  ok = ok && worst_random <= 0.03;
  s << "random: max |final labeled fraction - prior| " << fixed(worst_random, 4)
    << "; LC at 5% and 10%: final fraction minus prior, minimum over runs " << fixed(min_lc_margin, 4);
  return {ok, s.str()};
}

struct ColdStart {
  std::size_t random_failures = 0, heuristic_failures = 0, seeds = 50;
};

ColdStart cold_start() {
  const auto kw = default_keywords();
  const auto src = DatasetSource{};
  const auto docs = load_source(src, kw);
  const auto data = prepare_dataset(rebalance_source(src, docs, 0.05), src.id);
  ColdStart out;
  for (std::uint64_t seed = 1; seed <= out.seeds; ++seed)
    for (auto cold : {ColdStrategy::kRandom, ColdStrategy::kHeuristic}) {
      ExperimentConfig c;
      c.cold = cold;
      c.budget = c.seed_size;  // seed fit only
      const auto curve = run_active_learning(c, seed, data, kw);
      (cold == ColdStrategy::kRandom ? out.random_failures : out.heuristic_failures) += curve.failed;
    }
  return out;
}

Outcome threshold_sweep() {
  const auto kw = default_keywords();
  const auto docs = generate_synthetic_corpus(SyntheticSpec{}, kw);
  std::vector<Label> gold;
  std::vector<double> density;
  for (const auto& d : docs) {
    gold.push_back(d.label);
    density.push_back(keyword_density(d.text, kw));
  }
  std::ostringstream s;
  bool ok = true;
  std::optional<double> prev_fpr, prev_fnr;
  for (double k : {0.01, 0.05, 0.10, 0.25}) {
    std::vector<Label> weak;
    for (double d : density) weak.push_back(d > k ? kAbuse : kNonAbuse);
    const auto c = confusion(gold, weak);
    const auto r = fpr_fnr(c);
    ok = ok && r.fpr && r.fnr;
    if (!ok) break;
    if (prev_fpr) ok = ok && *r.fpr <= *prev_fpr && *r.fnr >= *prev_fnr;
    prev_fpr = r.fpr;
    prev_fnr = r.fnr;
    s << "K=" << format_double(k) << " F1 " << fixed(macro_f1(c)) << " FPR " << fixed(*r.fpr, 4)
      << " FNR " << fixed(*r.fnr, 4) << "; ";
  }
  return {ok, s.str()};
}

// ---------------------------------------------------------------------------
// Optional real-data check

Outcome wiki_passive(const std::string& train, const char* test) {
  json d = {{"id", "wiki"}, {"source", "file"}, {"path", train}};
  if (test) d["test_path"] = test;
  if (const char* fmt = std::getenv("ALSIM_WIKI_FORMAT")) d["format"] = fmt;
  if (const char* col = std::getenv("ALSIM_WIKI_TEXT_COLUMN")) d["text_column"] = col;
  if (const char* col = std::getenv("ALSIM_WIKI_LABEL_COLUMN")) d["label_column"] = col;
  d["scheme"] = "wiki";
  const auto src = DatasetSource::from_json(d);
  const auto docs = load_source(src, default_keywords());
  const auto data = prepare_dataset(rebalance_source(src, docs, 0.5), src.id);
  const auto r = run_passive_baseline(ExperimentConfig{}, 0, data);
  return {std::abs(r.macro_f1 - 0.875) <= 0.05,
          "passive F1 on a 20000-document 50% pool: " + fixed(r.macro_f1, 4) + " (target 0.875 +/- 0.05)"};
}

// ---------------------------------------------------------------------------
// Mock plugin

Outcome plugin_equivalence(const std::string& mock) {
  ScratchDir dir("mock");
  const json cfg = {
      {"datasets", json::array({{{"id", "synthetic"},
                                 {"synthetic", {{"size", 12000}}},
                                 {"pool_size", 3000},
                                 {"test_size", 1000}}})},
      {"grid",
       {{"imbalance", {0.5, 0.05}},
        {"classifiers",
         json::array({{{"name", "native"}},
                      {{"name", "mock"}, {"backend", "external-plugin"}, {"plugin_command", {mock}}}})},
        {"query_strategy", {"least_confidence", "random", "greedy_coreset", "embedding_kmeans"}},
        {"cold_strategy", {"heuristic", "random"}},
        {"budget", 520},
        {"seeds", {1, 2}}}},
      {"settings", {{"embedding_dim", 64}}},
      {"output_dir", dir.path.string()}};
  run_grid(grid_from_json(cfg));
  std::size_t compared = 0, equal = 0;
  for (const auto& [rel, text] : curve_files(dir.path)) {
    const fs::path p(rel);
    auto it = p.begin();
    std::advance(it, 2);
    if (*it != "native") continue;
    auto other = dir.path / p.parent_path().parent_path().parent_path().parent_path().parent_path() / "mock";
    auto tail = fs::path();
    auto jt = it;
    for (++jt; jt != p.end(); ++jt) tail /= *jt;
    ++compared;
    equal += read_text_file(other / tail) == text;
  }
  bool passive_equal = true;
  for (const char* imb : {"0.5", "0.05"})
    passive_equal = passive_equal &&
                    json::parse(read_text_file(dir.path / "synthetic" / imb / "native/passive.json"))["macro_f1"] ==
                        json::parse(read_text_file(dir.path / "synthetic" / imb / "mock/passive.json"))["macro_f1"];

  // Wire round trip for every message type.
  std::size_t round_trips = 0, round_ok = 0;
  const std::vector<PluginRequest> requests = {
      {"hello", {{"protocol_version", 1}, {"embedding_dim", 8}}},
      {"train", {{"ids", {1, 2}}, {"texts", {"a\nb", "c"}}, {"labels", {1, 0}}, {"batch_sizes", {2}}, {"seed", 3}}},
      {"predict", {{"ids", {1}}, {"texts", {"x"}}, {"model_id", 1}}},
      {"embed", {{"ids", {1}}, {"texts", {"x"}}}},
      {"reset", json::object()},
      {"shutdown", json::object()}};
  for (const auto& r : requests) {
    ++round_trips;
    round_ok += decode_request(encode_request(r)) == r;
  }
  const std::vector<PluginResponse> responses = {
      PluginResponse::success({{"protocol_version", 1}, {"embedding_dim", 8}}),
      PluginResponse::success({{"model_id", 1}}),
      PluginResponse::success({{"probs", {{0.3, 0.7}}}}),
      PluginResponse::success({{"embeddings", {{0.1, 0.2}}}}),
      PluginResponse::success(),
      PluginResponse::failure("single class", "single_class")};
  for (const auto& r : responses) {
    ++round_trips;
    round_ok += decode_response(encode_response(r)) == r;
  }
  std::ostringstream s;
  s << equal << "/" << compared << " curves bitwise equal across 4 strategies x 2 cold starts x 2 imbalances x 2 seeds; "
    << "passive scores " << (passive_equal ? "equal" : "differ") << "; protocol round trips " << round_ok << "/"
    << round_trips;
  return {compared == 32 && equal == compared && passive_equal && round_ok == round_trips, s.str()};
}

}  // namespace

int main() {
  const auto start = Clock::now();
  std::cout << std::unitbuf;

  // Reference grid, run twice into the same directory.
  ScratchDir grid_dir("grid");
  GridRun first, second;
  std::string grid_error;
  try {
    first = run_reference(grid_dir.path);
    fs::remove_all(grid_dir.path);
    second = run_reference(grid_dir.path);
  } catch (const std::exception& e) {
    grid_error = e.what();
  }

  check("determinism", [&]() -> Outcome {
    if (!grid_error.empty()) return {false, grid_error};
    // Diversity strategies on a smaller pool.
    const auto kw = default_keywords();
    SyntheticSpec spec;
    spec.size = 12000;
    const auto data = prepare_dataset(rebalance(generate_synthetic_corpus(spec, kw), 0.1, 3000, 1000, 0),
                                      "synthetic");
    std::size_t same = 0;
    for (auto q : {QueryStrategy::kGreedyCoreSet, QueryStrategy::kEmbeddingKMeans}) {
      ExperimentConfig c;
      c.imbalance = 0.1;
      c.query = q;
      c.budget = 520;
      same += curve_to_jsonl(run_active_learning(c, 1, data, kw)) ==
              curve_to_jsonl(run_active_learning(c, 1, data, kw));
    }
    const bool grid_same = first.curves == second.curves && first.curves.size() == 36;
    return {grid_same && same == 2,
            std::to_string(first.curves.size()) + " reference-grid curves " +
                (grid_same ? "identical" : "DIFFER") + " on rerun; coreset and k-means reruns " +
                std::to_string(same) + "/2 identical"};
  });

  check("runtime per synthetic run", [&]() -> Outcome {
    if (!grid_error.empty()) return {false, grid_error};
    return {first.max_run_seconds < 60.0,
            "slowest of " + std::to_string(first.runs) + " reference runs " + fixed(first.max_run_seconds, 2) +
                "s (grid incl. passive baselines " + fixed(first.total_seconds, 1) + "s)"};
  });

  check("pool invariants", pool_invariants);
  check("oracle equivalences", oracles);
  check("gradient check", gradient_check);
  check("rebalancing counts", rebalancing);

  const auto directional_start = Clock::now();
  check("LC N_90 <= random N_90 at 10% imbalance", [&] {
    return grid_error.empty() ? n90_direction(first, 0.1) : Outcome{false, grid_error};
  });
  check("LC N_90 <= random N_90 at 5% imbalance", [&] {
    return grid_error.empty() ? n90_direction(first, 0.05) : Outcome{false, grid_error};
  });
  check("labeled abuse fraction", [&] {
    return grid_error.empty() ? abuse_fraction(first) : Outcome{false, grid_error};
  });
  ColdStart cs;
  std::string cs_error;
  try {
    cs = cold_start();
  } catch (const std::exception& e) {
    cs_error = e.what();
  }
  check("random cold-start failure rate", [&]() -> Outcome {
    if (!cs_error.empty()) return {false, cs_error};
    const double rate = double(cs.random_failures) / double(cs.seeds);
    return {std::abs(rate - 0.358) <= 0.10, std::to_string(cs.random_failures) + "/" +
                                                  std::to_string(cs.seeds) + " seeds single-class (" +
                                                  fixed(rate) + ", expected 0.358 +/- 0.10) at 5%, seed size 20"};
  });
  check("heuristic cold start never fails", [&]() -> Outcome {
    if (!cs_error.empty()) return {false, cs_error};
    return {cs.heuristic_failures == 0,
            std::to_string(cs.heuristic_failures) + "/" + std::to_string(cs.seeds) + " seeds single-class"};
  });
  const double directional_secs = since(directional_start) + first.total_seconds;
  check("directional checks total time", [&]() -> Outcome {
    return {directional_secs < 1800.0, fixed(directional_secs, 1) + "s including the reference grid"};
  });
  check("keyword threshold sweep", threshold_sweep);

  if (const char* wiki = std::getenv("ALSIM_WIKI_TRAIN"))
    check("wiki passive F1", [&] { return wiki_passive(wiki, std::getenv("ALSIM_WIKI_TEST")); });
  else
    skip("wiki passive F1", "set ALSIM_WIKI_TRAIN (and optionally ALSIM_WIKI_TEST) to a labeled file");

#ifdef ALSIM_MOCK_PLUGIN
  check("mock plugin equivalence", [] { return plugin_equivalence(ALSIM_MOCK_PLUGIN); });
#else
  skip("mock plugin equivalence", "built without the mock plugin");
#endif
  skip("transformer backend", "needs the external transformer plugin, a GPU and the original corpus");

  std::cout << (g_failures ? "FAILED " : "ALL PASSED ") << "(" << g_failures << " failing, "
            << fixed(since(start), 1) << "s)" << std::endl;
  return g_failures ? 1 : 0;
}
