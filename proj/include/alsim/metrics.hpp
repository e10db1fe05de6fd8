#pragma once

// Classification metrics, efficiency (N_90) and effectiveness (F1_AL) over
// learning curves, and multi-seed aggregation.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "alsim/common.hpp"
#include "alsim/curve.hpp"

namespace alsim {

/// Positive class = abuse.
struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

inline ConfusionCounts confusion(std::span<const Label> gold, std::span<const Label> predicted) {
  if (gold.size() != predicted.size()) throw std::invalid_argument("label count mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] == kAbuse)
      (predicted[i] == kAbuse ? c.tp : c.fn)++;
    else
      (predicted[i] == kAbuse ? c.fp : c.tn)++;
  }
  return c;
}

/// F1 of one class from its own tp/fp/fn; 0 when the class is neither
/// predicted nor present.
inline double class_f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * double(tp) / double(denom);
}

/// Unweighted mean of the abuse and non-abuse F1 scores.
inline double macro_f1(const ConfusionCounts& c) {
  if (c.total() == 0) throw std::invalid_argument("macro_f1 of empty confusion counts");
  const double f1_pos = class_f1(c.tp, c.fp, c.fn);
  const double f1_neg = class_f1(c.tn, c.fn, c.fp);
  return 0.5 * (f1_pos + f1_neg);
}

struct ErrorRates {
  std::optional<double> fpr;  // empty when there are no actual negatives
  std::optional<double> fnr;  // empty when there are no actual positives
};

inline ErrorRates fpr_fnr(const ConfusionCounts& c) {
  ErrorRates r;
  if (c.fp + c.tn > 0) r.fpr = double(c.fp) / double(c.fp + c.tn);
  if (c.fn + c.tp > 0) r.fnr = double(c.fn) / double(c.fn + c.tp);
  return r;
}

// ---------------------------------------------------------------------------
// Curve metrics

/// Smallest labeled count whose F1 reaches 0.9 * f1_ref (>= by default,
/// > with `strict`). Empty when never reached.
inline std::optional<std::size_t> compute_n90(std::span<const CurvePoint> curve, double f1_ref,
                                              bool strict = false) {
  if (curve.empty()) throw std::invalid_argument("compute_n90 on an empty curve");
  const double threshold = 0.9 * f1_ref;
  std::optional<std::size_t> best;
  for (const auto& p : curve) {
    const bool hit = strict ? p.macro_f1 > threshold : p.macro_f1 >= threshold;
    if (hit && (!best || p.labeled_count < *best)) best = p.labeled_count;
  }
  return best;
}

inline std::optional<std::size_t> compute_n90(const LearningCurve& curve, double f1_ref,
                                              bool strict = false) {
  return compute_n90(curve.points, f1_ref, strict);
}

/// Maximum F1 anywhere on the curve.
inline double compute_f1_al(std::span<const CurvePoint> curve) {
  if (curve.empty()) throw std::invalid_argument("compute_f1_al on an empty curve");
  double best = curve.front().macro_f1;
  for (const auto& p : curve) best = std::max(best, p.macro_f1);
  return best;
}

inline double compute_f1_al(const LearningCurve& curve) { return compute_f1_al(curve.points); }

/// Abuse fraction of the labeled pool at each point.
inline std::vector<double> labeled_imbalance_curve(const LearningCurve& curve) {
  std::vector<double> out;
  out.reserve(curve.points.size());
  for (const auto& p : curve.points) out.push_back(p.abuse_fraction());
  return out;
}

// ---------------------------------------------------------------------------
// Aggregation across seeds

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

/// Sorted summation keeps the result independent of input order.
inline MeanStd mean_std(std::vector<double> values) {
  if (values.empty()) return {};
  std::sort(values.begin(), values.end());
  const double n = double(values.size());
  if (values.front() == values.back()) return {values.front(), 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  double mean = sum / n;
  double resid = 0.0;
  for (double v : values) resid += v - mean;
  mean += resid / n;
  std::vector<double> sq;
  sq.reserve(values.size());
  for (double v : values) sq.push_back((v - mean) * (v - mean));
  std::sort(sq.begin(), sq.end());
  double ss = 0.0;
  for (double v : sq) ss += v;
  return {mean, std::sqrt(ss / n)};
}

struct MeanCurvePoint {
  std::size_t labeled_count = 0;
  MeanStd f1;
  MeanStd abuse_fraction;
};

struct RunSummary {
  std::optional<double> f1_ref;           // passive reference (best F1_20k)
  std::vector<MeanCurvePoint> curve;      // over successful runs
  std::size_t n_runs = 0;
  std::size_t n_failed = 0;
  std::optional<MeanStd> f1_al;           // per-run F1_AL over successful runs
  std::optional<double> f1_al_all_runs;   // failed runs counted as F1 0
  std::optional<std::size_t> n90;         // on the mean curve
  std::vector<std::optional<std::size_t>> n90_per_run;  // successful runs, input order
  std::vector<std::uint64_t> seeds;

  std::string failure_note() const {
    return std::to_string(n_failed) + "/" + std::to_string(n_runs) + " failed";
  }
};

/// Pointwise mean/std of F1 across seeds. Failed runs are counted and
/// excluded from the means; successful curves must share labeled counts.
inline RunSummary aggregate_runs(std::span<const LearningCurve> runs,
                                 std::optional<double> f1_ref = std::nullopt,
                                 bool strict_n90 = false) {
  RunSummary s;
  s.f1_ref = f1_ref;
  s.n_runs = runs.size();
  std::vector<const LearningCurve*> ok;
  for (const auto& r : runs) {
    s.seeds.push_back(r.seed);
    if (r.failed || r.points.empty())
      ++s.n_failed;
    else
      ok.push_back(&r);
  }
  std::sort(s.seeds.begin(), s.seeds.end());
  if (ok.empty()) {
    if (!runs.empty()) s.f1_al_all_runs = 0.0;
    return s;
  }

  const auto& ref = ok.front()->points;
  for (const auto* r : ok) {
    if (r->points.size() != ref.size())
      throw std::invalid_argument("misaligned curves: point counts differ");
    for (std::size_t i = 0; i < ref.size(); ++i)
      if (r->points[i].labeled_count != ref[i].labeled_count)
        throw std::invalid_argument("misaligned curves: labeled counts differ at point " +
                                    std::to_string(i));
  }

  for (std::size_t i = 0; i < ref.size(); ++i) {
    std::vector<double> f1, frac;
    for (const auto* r : ok) {
      f1.push_back(r->points[i].macro_f1);
      frac.push_back(r->points[i].abuse_fraction());
    }
    s.curve.push_back({ref[i].labeled_count, mean_std(f1), mean_std(frac)});
  }

  std::vector<double> f1_al;
  for (const auto* r : ok) f1_al.push_back(compute_f1_al(*r));
  s.f1_al = mean_std(f1_al);
  std::vector<double> all = f1_al;
  all.resize(runs.size(), 0.0);
  s.f1_al_all_runs = mean_std(all).mean;

  if (f1_ref) {
    std::vector<CurvePoint> mean_curve;
    for (const auto& p : s.curve) {
      CurvePoint cp;
      cp.labeled_count = p.labeled_count;
      cp.macro_f1 = p.f1.mean;
      mean_curve.push_back(cp);
    }
    s.n90 = compute_n90(mean_curve, *f1_ref, strict_n90);
    for (const auto* r : ok) s.n90_per_run.push_back(compute_n90(*r, *f1_ref, strict_n90));
  }
  return s;
}

}  // namespace alsim
