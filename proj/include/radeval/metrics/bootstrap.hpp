#pragma once

// Percentile bootstrap confidence intervals.
//
// Resample r draws n indices with uniform_index(rng, n) from a single
// mt19937_64 stream seeded with `seed`; resamples are drawn in order. The
// interval bounds are linearly interpolated quantiles (numpy's default)
// of the sorted resample statistics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "radeval/error.hpp"
#include "radeval/random.hpp"

namespace radeval::metrics {

inline constexpr std::size_t kDefaultResamples = 10000;
inline constexpr double kDefaultLevel = 0.95;

struct Interval {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool operator==(const Interval&) const = default;
};

enum class Aggregator { kMean, kMedian, kSum };

inline Aggregator parse_aggregator(std::string_view s) {
  if (s == "mean") return Aggregator::kMean;
  if (s == "median") return Aggregator::kMedian;
  if (s == "sum") return Aggregator::kSum;
  throw Error(ErrorCode::kInvalidArgument, "unknown aggregator '" + std::string(s) + "'", "statistic");
}

inline double quantile_sorted(std::span<const double> sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double aggregate(Aggregator agg, std::span<const double> v) {
  switch (agg) {
    case Aggregator::kSum: {
      double s = 0.0;
      for (double x : v) s += x;
      return s;
    }
    case Aggregator::kMean: {
      double s = 0.0;
      for (double x : v) s += x;
      return s / static_cast<double>(v.size());
    }
    case Aggregator::kMedian: {
      std::vector<double> c(v.begin(), v.end());
      std::sort(c.begin(), c.end());
      return quantile_sorted(c, 0.5);
    }
  }
  return 0.0;
}

// Generic form: `statistic` maps a list of indices into the sample
// (a resample, or 0..n-1 for the point estimate) to a scalar.
template <typename Statistic>
Interval bootstrap_ci_indexed(std::size_t n, Statistic&& statistic, std::size_t n_resamples = kDefaultResamples,
                              double level = kDefaultLevel, std::uint64_t seed = 0) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "bootstrap_ci: empty input", "values");
  if (n_resamples == 0) throw Error(ErrorCode::kInvalidArgument, "bootstrap_ci: n_resamples must be positive", "n_resamples");
  if (!(level > 0.0 && level < 1.0)) throw Error(ErrorCode::kInvalidArgument, "bootstrap_ci: level must lie in (0, 1)", "level");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Interval out;
  out.point = statistic(std::span<const std::size_t>(idx));

  Rng rng(seed);
  std::vector<double> stats;
  stats.reserve(n_resamples);
  for (std::size_t r = 0; r < n_resamples; ++r) {
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::size_t>(uniform_index(rng, n));
    stats.push_back(statistic(std::span<const std::size_t>(idx)));
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = (1.0 - level) / 2.0;
  out.lower = quantile_sorted(stats, alpha);
  out.upper = quantile_sorted(stats, 1.0 - alpha);
  return out;
}

inline Interval bootstrap_ci(std::span<const double> values, Aggregator agg = Aggregator::kMean,
                             std::size_t n_resamples = kDefaultResamples, double level = kDefaultLevel,
                             std::uint64_t seed = 0) {
  std::vector<double> scratch(values.size());
  return bootstrap_ci_indexed(
      values.size(),
      [&](std::span<const std::size_t> idx) {
        for (std::size_t i = 0; i < idx.size(); ++i) scratch[i] = values[idx[i]];
        return aggregate(agg, scratch);
      },
      n_resamples, level, seed);
}

}  // namespace radeval::metrics
