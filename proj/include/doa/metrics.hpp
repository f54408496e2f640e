#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "doa/errors.hpp"

namespace doa {

using AngleSet = std::vector<double>;

enum class Pairing { Sorted, Optimal };

namespace detail {

inline double squared_error(AngleSet a, AngleSet b, Pairing pairing) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  auto cost = [&](const AngleSet& bb) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - bb[i]) * (a[i] - bb[i]);
    return s;
  };
  if (pairing == Pairing::Sorted) return cost(b);
  if (b.size() > 8) throw DomainError("rmse: optimal pairing is limited to 8 sources");
  double best = cost(b);
  while (std::next_permutation(b.begin(), b.end())) best = std::min(best, cost(b));
  return best;
}

}  // namespace detail

/// sqrt( 1/(MC K) sum_trials sum_k (theta_k - theta_hat_k)^2 ), with the sets
/// of each trial paired after sorting (or by the best permutation).
inline double rmse(const std::vector<AngleSet>& truths, const std::vector<AngleSet>& estimates,
                   Pairing pairing = Pairing::Sorted) {
  if (truths.size() != estimates.size()) {
    throw DomainError("rmse: " + std::to_string(truths.size()) + " truths vs " + std::to_string(estimates.size()) +
                      " estimates");
  }
  if (truths.empty()) throw DomainError("rmse: no trials");
  double sum = 0.0;
  std::size_t terms = 0;
  for (std::size_t t = 0; t < truths.size(); ++t) {
    if (truths[t].size() != estimates[t].size() || truths[t].empty()) {
      throw DomainError("rmse: trial " + std::to_string(t) + " has " + std::to_string(truths[t].size()) +
                        " true and " + std::to_string(estimates[t].size()) + " estimated angles");
    }
    sum += detail::squared_error(truths[t], estimates[t], pairing);
    terms += truths[t].size();
  }
  return std::sqrt(sum / static_cast<double>(terms));
}

inline double rmse(const AngleSet& truth, const AngleSet& estimate, Pairing pairing = Pairing::Sorted) {
  return rmse(std::vector<AngleSet>{truth}, std::vector<AngleSet>{estimate}, pairing);
}

/// Marker for the Hausdorff distance when exactly one set is empty.
inline constexpr double kUndefinedDistance = std::numeric_limits<double>::infinity();

/// sup over a in A of the distance from a to the nearest element of B.
inline double directed_distance(const AngleSet& a, const AngleSet& b) {
  double d = 0.0;
  for (double x : a) {
    double nearest = std::numeric_limits<double>::infinity();
    for (double y : b) nearest = std::min(nearest, std::abs(x - y));
    d = std::max(d, nearest);
  }
  return d;
}

/// max{d(A, B), d(B, A)}; 0 for two empty sets, kUndefinedDistance if only one is empty.
inline double hausdorff(const AngleSet& a, const AngleSet& b) {
  if (a.empty() && b.empty()) return 0.0;
  if (a.empty() || b.empty()) return kUndefinedDistance;
  return std::max(directed_distance(a, b), directed_distance(b, a));
}

struct HausdorffSummary {
  double mean = 0.0;
  double max = 0.0;
  std::size_t defined = 0;
  std::size_t undefined = 0;
};

/// Mean and max over the defined distances; undefined ones are only counted.
inline HausdorffSummary summarize_hausdorff(const std::vector<double>& distances) {
  HausdorffSummary s;
  double sum = 0.0;
  for (double d : distances) {
    if (std::isinf(d)) {
      ++s.undefined;
      continue;
    }
    ++s.defined;
    sum += d;
    s.max = std::max(s.max, d);
  }
  if (s.defined) s.mean = sum / static_cast<double>(s.defined);
  return s;
}

/// Counts of (true K, predicted K) for K in 0..k_display, plus one overflow
/// row/column for anything larger.
struct ConfusionMatrix {
  std::size_t k_display = 0;
  std::vector<std::vector<std::size_t>> counts;

  [[nodiscard]] std::size_t dimension() const { return k_display + 2; }
  [[nodiscard]] std::size_t bucket(std::size_t k) const { return std::min(k, k_display + 1); }
  [[nodiscard]] std::size_t total() const {
    std::size_t n = 0;
    for (const auto& row : counts) n = std::accumulate(row.begin(), row.end(), n);
    return n;
  }
  [[nodiscard]] std::size_t correct() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) n += counts[i][i];
    return n;
  }
  [[nodiscard]] double accuracy() const {
    const auto n = total();
    return n ? static_cast<double>(correct()) / static_cast<double>(n) : 0.0;
  }
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& true_counts,
                                 const std::vector<std::size_t>& predicted_counts, std::size_t k_display) {
  if (true_counts.size() != predicted_counts.size()) throw DomainError("confusion: length mismatch");
  ConfusionMatrix m{k_display, {}};
  m.counts.assign(m.dimension(), std::vector<std::size_t>(m.dimension(), 0));
  for (std::size_t i = 0; i < true_counts.size(); ++i) ++m.counts[m.bucket(true_counts[i])][m.bucket(predicted_counts[i])];
  return m;
}

}  // namespace doa
