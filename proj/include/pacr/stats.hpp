#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace pacr::stats {

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

double mean(std::span<const double> xs);

/// Percentile of a sample by linear interpolation, q in [0,1].
double percentile(std::vector<double> xs, double q);

/// Percentile-bootstrap 95% CI for mean(a) - mean(b). Each group is
/// resampled with replacement at its own size; deterministic given seed.
Interval bootstrap_diff_ci(std::span<const double> a, std::span<const double> b,
                           int resamples, std::uint64_t seed);

/// Percentile-bootstrap 95% CI for the mean of one sample.
Interval bootstrap_mean_ci(std::span<const double> xs, int resamples,
                           std::uint64_t seed);

/// Wilson score 95% interval for a binomial proportion.
Interval wilson_interval(int successes, int trials);

/// One-sided Wilcoxon signed-rank test, H1: median(diffs) > 0.
/// Zeros are dropped; ties get average ranks; normal approximation with
/// tie and continuity corrections. Returns the p-value (1.0 when no
/// non-zero differences remain).
double wilcoxon_signed_rank_p_greater(std::span<const double> diffs);

/// Standard normal CDF.
double normal_cdf(double z);

}  // namespace pacr::stats
