#pragma once

// Clinical label metrics: micro-averaged F1 over finding categories,
// expert consensus labels, Kendall's tau-b and ROC analysis.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <vector>

#include "radeval/error.hpp"
#include "radeval/labeler.hpp"

namespace radeval::metrics {

// ---------------------------------------------------------------------------
// Micro-averaged F1

enum class UncertainPolicy { kAsNegative, kAsPositive };

inline bool is_positive(LabelValue v, UncertainPolicy policy) {
  return v == LabelValue::kPositive ||
         (policy == UncertainPolicy::kAsPositive && v == LabelValue::kUncertain);
}

struct ConfusionCounts {
  long tp = 0, fp = 0, fn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;

  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn); }
  // 2TP / (2TP + FP + FN); zero when there is nothing to count.
  double f1() const {
    const long den = 2 * tp + fp + fn;
    return den == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(den);
  }
};

struct F1Result {
  double f1 = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  ConfusionCounts counts;
  std::map<FindingCategory, ConfusionCounts> by_category;
};

inline F1Result micro_f1(std::span<const LabelVector> predicted, std::span<const LabelVector> target,
                         std::span<const FindingCategory> categories,
                         UncertainPolicy policy = UncertainPolicy::kAsNegative) {
  if (predicted.size() != target.size()) {
    throw Error(ErrorCode::kInvalidArgument, "micro_f1: predicted/target length mismatch");
  }
  F1Result r;
  for (auto c : categories) r.by_category[c];
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (auto c : categories) {
      const bool p = is_positive(predicted[i][c], policy);
      const bool t = is_positive(target[i][c], policy);
      auto& cc = r.by_category[c];
      if (p && t) ++cc.tp;
      if (p && !t) ++cc.fp;
      if (!p && t) ++cc.fn;
    }
  }
  for (const auto& [c, cc] : r.by_category) r.counts += cc;
  r.f1 = r.counts.f1();
  r.precision = r.counts.precision();
  r.recall = r.counts.recall();
  return r;
}

inline F1Result micro_f1_all(std::span<const LabelVector> predicted, std::span<const LabelVector> target,
                             UncertainPolicy policy = UncertainPolicy::kAsNegative) {
  return micro_f1(predicted, target, kAllCategories, policy);
}

inline F1Result micro_f1_top5(std::span<const LabelVector> predicted, std::span<const LabelVector> target,
                              UncertainPolicy policy = UncertainPolicy::kAsNegative) {
  return micro_f1(predicted, target, top5_categories(), policy);
}

// ---------------------------------------------------------------------------
// Consensus

struct ConsensusLabel {
  FindingCategory category = FindingCategory::kNoFinding;
  int hard = 0;       // majority vote
  double soft = 0.0;  // mean annotation
  std::size_t n_annotations = 0;
};

inline ConsensusLabel majority_and_soft(std::span<const int> annotations,
                                        FindingCategory category = FindingCategory::kNoFinding) {
  if (annotations.empty()) throw Error(ErrorCode::kInvalidArgument, "majority_and_soft: no annotations");
  long positives = 0;
  for (int a : annotations) {
    if (a != 0 && a != 1) throw Error(ErrorCode::kInvalidArgument, "annotations must be binary");
    positives += a;
  }
  ConsensusLabel c;
  c.category = category;
  c.n_annotations = annotations.size();
  c.soft = static_cast<double>(positives) / static_cast<double>(annotations.size());
  c.hard = c.soft > 0.5 ? 1 : 0;
  return c;
}

// ---------------------------------------------------------------------------
// Kendall's tau-b, O(n log n) (Knight's algorithm)

namespace detail {

inline std::int64_t tie_pairs(std::span<const double> sorted_values) {
  std::int64_t total = 0, run = 1;
  for (std::size_t i = 1; i <= sorted_values.size(); ++i) {
    if (i < sorted_values.size() && sorted_values[i] == sorted_values[i - 1]) {
      ++run;
    } else {
      total += run * (run - 1) / 2;
      run = 1;
    }
  }
  return total;
}

// Sorts `v` ascending and returns the number of strictly inverted pairs.
inline std::int64_t merge_count(std::vector<double>& v, std::vector<double>& buf, std::size_t lo,
                                std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t swaps = merge_count(v, buf, lo, mid) + merge_count(v, buf, mid, hi);
  std::size_t i = lo, j = mid, k = lo;
  while (i < mid && j < hi) {
    if (v[j] < v[i]) {
      swaps += static_cast<std::int64_t>(mid - i);
      buf[k++] = v[j++];
    } else {
      buf[k++] = v[i++];
    }
  }
  while (i < mid) buf[k++] = v[i++];
  while (j < hi) buf[k++] = v[j++];
  std::copy(buf.begin() + static_cast<std::ptrdiff_t>(lo), buf.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return swaps;
}

}  // namespace detail

inline double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::kInvalidArgument, "kendall_tau_b: length mismatch");
  const std::size_t n = a.size();
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "kendall_tau_b: need at least two observations");
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(a[i]) || std::isnan(b[i])) throw Error(ErrorCode::kInvalidArgument, "kendall_tau_b: NaN input");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    return a[i] < a[j] || (a[i] == a[j] && b[i] < b[j]);
  });
  std::vector<double> sa(n), sb(n);
  for (std::size_t k = 0; k < n; ++k) {
    sa[k] = a[order[k]];
    sb[k] = b[order[k]];
  }
  const std::int64_t ties_a = detail::tie_pairs(sa);
  std::int64_t ties_joint = 0, run = 1;
  for (std::size_t k = 1; k <= n; ++k) {
    if (k < n && sa[k] == sa[k - 1] && sb[k] == sb[k - 1]) {
      ++run;
    } else {
      ties_joint += run * (run - 1) / 2;
      run = 1;
    }
  }
  std::vector<double> buf(n);
  const std::int64_t swaps = detail::merge_count(sb, buf, 0, n);  // sb is now sorted
  const std::int64_t ties_b = detail::tie_pairs(sb);
  const std::int64_t total = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  if (total == ties_a || total == ties_b) {
    throw Error(ErrorCode::kDegenerate, "kendall_tau_b: all values tied in one argument");
  }
  const double con_minus_dis =
      static_cast<double>(total - ties_a - ties_b + ties_joint - 2 * swaps);
  return con_minus_dis / std::sqrt(static_cast<double>(total - ties_a) * static_cast<double>(total - ties_b));
}

// ---------------------------------------------------------------------------
// ROC

struct RocPoint {
  double false_positive_rate = 0.0;
  double true_positive_rate = 0.0;
  double threshold = 0.0;  // predict positive when score >= threshold
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

// Sweeps every distinct score as a threshold, highest first. The first
// point is (0, 0) at threshold +inf; AUC by the trapezoid rule.
inline RocCurve roc(std::span<const double> scores, std::span<const int> targets) {
  if (scores.size() != targets.size()) throw Error(ErrorCode::kInvalidArgument, "roc: length mismatch");
  long positives = 0, negatives = 0;
  for (int t : targets) {
    if (t == 1) ++positives;
    else if (t == 0) ++negatives;
    else throw Error(ErrorCode::kInvalidArgument, "roc: targets must be binary");
  }
  if (positives == 0 || negatives == 0) {
    throw Error(ErrorCode::kDegenerate, "roc: targets contain a single class");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return scores[i] > scores[j]; });

  RocCurve curve;
  curve.points.push_back({0.0, 0.0, std::numeric_limits<double>::infinity()});
  long tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double threshold = scores[order[k]];
    while (k < order.size() && scores[order[k]] == threshold) {
      if (targets[order[k]] == 1) ++tp;
      else ++fp;
      ++k;
    }
    curve.points.push_back({static_cast<double>(fp) / static_cast<double>(negatives),
                            static_cast<double>(tp) / static_cast<double>(positives), threshold});
  }
  for (std::size_t k = 1; k < curve.points.size(); ++k) {
    const auto& p = curve.points[k - 1];
    const auto& q = curve.points[k];
    curve.auc += (q.false_positive_rate - p.false_positive_rate) *
                 (q.true_positive_rate + p.true_positive_rate) / 2.0;
  }
  return curve;
}

// Micro-average: (score, target) pairs of every condition pooled before the
// sweep.
inline RocCurve roc_micro(std::span<const std::vector<double>> scores_by_condition,
                          std::span<const std::vector<int>> targets_by_condition) {
  if (scores_by_condition.size() != targets_by_condition.size()) {
    throw Error(ErrorCode::kInvalidArgument, "roc_micro: condition count mismatch");
  }
  std::vector<double> scores;
  std::vector<int> targets;
  for (std::size_t c = 0; c < scores_by_condition.size(); ++c) {
    if (scores_by_condition[c].size() != targets_by_condition[c].size()) {
      throw Error(ErrorCode::kInvalidArgument, "roc_micro: length mismatch");
    }
    scores.insert(scores.end(), scores_by_condition[c].begin(), scores_by_condition[c].end());
    targets.insert(targets.end(), targets_by_condition[c].begin(), targets_by_condition[c].end());
  }
  return roc(scores, targets);
}

}  // namespace radeval::metrics
