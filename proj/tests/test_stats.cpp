#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "pacr/seeding.hpp"
#include "pacr/stats.hpp"

using namespace pacr;

TEST_CASE("stream seeds differ across tags and masters") {
  CHECK(seeding::stream_seed(1, 1) != seeding::stream_seed(1, 2));
  CHECK(seeding::stream_seed(1, 1) != seeding::stream_seed(2, 1));
  CHECK(seeding::stream_seed(1, 1) == seeding::stream_seed(1, 1));
}

TEST_CASE("canonical uniform stays in [0,1)") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = seeding::canonical_uniform(rng);
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("percentile interpolates") {
  std::vector<double> xs = {4.0, 1.0, 3.0, 2.0};
  CHECK(stats::percentile(xs, 0.0) == doctest::Approx(1.0));
  CHECK(stats::percentile(xs, 1.0) == doctest::Approx(4.0));
  CHECK(stats::percentile(xs, 0.5) == doctest::Approx(2.5));
}

TEST_CASE("bootstrap CI brackets an obvious separation") {
  std::vector<double> high(40, 0.9);
  std::vector<double> low(40, 0.1);
  const auto ci = stats::bootstrap_diff_ci(high, low, 2000, 3);
  CHECK(ci.lo == doctest::Approx(0.8));
  CHECK(ci.hi == doctest::Approx(0.8));
  CHECK(!ci.contains(0.0));
}

TEST_CASE("bootstrap CI is deterministic given the seed") {
  std::vector<double> a = {0.2, 0.4, 0.9, 0.7, 0.5};
  std::vector<double> b = {0.1, 0.3, 0.2, 0.6, 0.4};
  const auto c1 = stats::bootstrap_diff_ci(a, b, 500, 42);
  const auto c2 = stats::bootstrap_diff_ci(a, b, 500, 42);
  CHECK(c1.lo == c2.lo);
  CHECK(c1.hi == c2.hi);
  CHECK(c1.lo <= c1.hi);
}

TEST_CASE("bootstrap mean CI contains the point estimate") {
  std::vector<double> xs = {0.1, 0.5, 0.4, 0.8, 0.3, 0.9};
  const auto ci = stats::bootstrap_mean_ci(xs, 2000, 9);
  CHECK(ci.contains(stats::mean(xs)));
}

TEST_CASE("wilson interval behaves at the extremes") {
  const auto all = stats::wilson_interval(20, 20);
  CHECK(all.lo > 0.8);
  CHECK(all.hi == doctest::Approx(1.0).epsilon(1e-9));
  const auto none = stats::wilson_interval(0, 20);
  CHECK(none.lo == doctest::Approx(0.0).epsilon(1e-9));
  const auto half = stats::wilson_interval(10, 20);
  CHECK(half.contains(0.5));
}

TEST_CASE("normal cdf basic values") {
  CHECK(stats::normal_cdf(0.0) == doctest::Approx(0.5));
  CHECK(stats::normal_cdf(1.959964) == doctest::Approx(0.975).epsilon(1e-4));
}

TEST_CASE("wilcoxon detects a consistent positive shift") {
  std::vector<double> diffs;
  std::mt19937_64 rng(11);
  for (int i = 0; i < 25; ++i) {
    diffs.push_back(1.0 + 0.1 * static_cast<double>(rng() % 10));
  }
  CHECK(stats::wilcoxon_signed_rank_p_greater(diffs) < 0.001);
  for (auto& d : diffs) d = -d;
  CHECK(stats::wilcoxon_signed_rank_p_greater(diffs) > 0.99);
}

TEST_CASE("wilcoxon on pure noise is not significant") {
  std::vector<double> diffs;
  std::mt19937_64 rng(13);
  for (int i = 0; i < 30; ++i) {
    diffs.push_back((rng() % 2 == 0 ? 1.0 : -1.0) *
                    (1.0 + static_cast<double>(rng() % 5)));
  }
  const double p = stats::wilcoxon_signed_rank_p_greater(diffs);
  CHECK(p > 0.05);
}

TEST_CASE("wilcoxon handles zeros and empty input") {
  std::vector<double> zeros(5, 0.0);
  CHECK(stats::wilcoxon_signed_rank_p_greater(zeros) == doctest::Approx(1.0));
  CHECK(stats::wilcoxon_signed_rank_p_greater({}) == doctest::Approx(1.0));
}
