#include "pacr/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pacr/errors.hpp"
#include "pacr/seeding.hpp"

namespace pacr::stats {

double mean(std::span<const double> xs) {
  if (xs.empty()) throw StateError("mean of empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) /
         static_cast<double>(xs.size());
}

double percentile(std::vector<double> xs, double q) {
  if (xs.empty()) throw StateError("percentile of empty sample");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

namespace {

double resampled_mean(std::span<const double> xs, std::mt19937_64& rng) {
  double sum = 0.0;
  const auto n = xs.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(
        seeding::canonical_uniform(rng) * static_cast<double>(n));
    sum += xs[std::min(idx, n - 1)];
  }
  return sum / static_cast<double>(n);
}

}  // namespace

Interval bootstrap_diff_ci(std::span<const double> a, std::span<const double> b,
                           int resamples, std::uint64_t seed) {
  if (a.empty() || b.empty()) throw StateError("bootstrap on empty group");
  std::mt19937_64 rng(seed);
  std::vector<double> diffs;
  diffs.reserve(static_cast<std::size_t>(resamples));
  for (int r = 0; r < resamples; ++r) {
    diffs.push_back(resampled_mean(a, rng) - resampled_mean(b, rng));
  }
  return {percentile(diffs, 0.025), percentile(std::move(diffs), 0.975)};
}

Interval bootstrap_mean_ci(std::span<const double> xs, int resamples,
                           std::uint64_t seed) {
  if (xs.empty()) throw StateError("bootstrap on empty sample");
  std::mt19937_64 rng(seed);
  std::vector<double> means;
  means.reserve(static_cast<std::size_t>(resamples));
  for (int r = 0; r < resamples; ++r) means.push_back(resampled_mean(xs, rng));
  return {percentile(means, 0.025), percentile(std::move(means), 0.975)};
}

Interval wilson_interval(int successes, int trials) {
  if (trials <= 0) throw StateError("wilson interval with no trials");
  const double z = 1.959963984540054;  // 97.5% normal quantile
  const double n = trials;
  const double p = successes / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half =
      z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {center - half, center + half};
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double wilcoxon_signed_rank_p_greater(std::span<const double> diffs) {
  std::vector<double> nonzero;
  for (double d : diffs) {
    if (d != 0.0) nonzero.push_back(d);
  }
  const auto n = nonzero.size();
  if (n == 0) return 1.0;

  // Rank |d| ascending with average ranks for ties.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(nonzero[a]) < std::abs(nonzero[b]);
  });
  std::vector<double> rank(n, 0.0);
  double tie_correction = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n &&
           std::abs(nonzero[order[j + 1]]) == std::abs(nonzero[order[i]])) {
      ++j;
    }
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg_rank;
    const double t = static_cast<double>(j - i + 1);
    tie_correction += t * t * t - t;
    i = j + 1;
  }

  double w_plus = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    if (nonzero[k] > 0.0) w_plus += rank[k];
  }
  const double nd = static_cast<double>(n);
  const double mu = nd * (nd + 1.0) / 4.0;
  const double var =
      nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_correction / 48.0;
  if (var <= 0.0) return w_plus > mu ? 0.0 : 1.0;
  const double z = (w_plus - mu - 0.5) / std::sqrt(var);
  return 1.0 - normal_cdf(z);
}

}  // namespace pacr::stats
