#include <doctest.h>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "pacr/errors.hpp"
#include "pacr/trace.hpp"

using namespace pacr;

namespace {

std::string join_steps(const std::vector<trace::ReasoningStep>& steps) {
  std::string out;
  for (const auto& step : steps) out += step.raw_text;
  return out;
}

trace::Trajectory trajectory_with_steps(int num_steps) {
  const auto tokenize = trace::make_whitespace_tokenizer();
  trace::Trajectory traj;
  for (int k = 0; k < num_steps; ++k) {
    const std::string text = "step body number " + std::to_string(k) + " here\n";
    traj.steps.push_back({tokenize(text), text});
  }
  return traj;
}

// Random text mixing words, newlines, and ". " delimiters.
std::string random_delimited_text(std::mt19937_64& rng) {
  static const char* words[] = {"alpha", "beta",  "gamma", "x1",
                                "12.5",  "delta", "eps.",  "z"};
  std::string text;
  const int pieces = 1 + static_cast<int>(rng() % 40);
  for (int i = 0; i < pieces; ++i) {
    switch (rng() % 6) {
      case 0: text += "\n"; break;
      case 1: text += ". "; break;
      case 2: text += ".\n"; break;
      default:
        text += words[rng() % 8];
        text += " ";
        break;
    }
  }
  if (text.empty()) text = "fallback token";
  // Guarantee at least one token so segmentation is well-defined.
  text += "end";
  return text;
}

}  // namespace

TEST_CASE("whitespace tokenizer interns words") {
  const auto tokenize = trace::make_whitespace_tokenizer();
  const auto tokens = tokenize("a b a\tc\n b");
  REQUIRE(tokens.size() == 5);
  CHECK(tokens[0].surface == "a");
  CHECK(tokens[0].id == tokens[2].id);
  CHECK(tokens[1].id == tokens[4].id);
  CHECK(tokens[0].id != tokens[1].id);
  for (const auto& token : tokens) {
    CHECK(token.id >= 0);
    CHECK(!token.surface.empty());
  }
}

TEST_CASE("segment merges a short leading fragment forward") {
  const auto tokenize = trace::make_whitespace_tokenizer();
  const auto steps = trace::segment("A.\nBB longer step here now", tokenize);
  REQUIRE(steps.size() == 1);
  CHECK(steps[0].raw_text == "A.\nBB longer step here now");
}

TEST_CASE("segment splits on period followed by space") {
  const auto tokenize = trace::make_whitespace_tokenizer();
  const auto steps = trace::segment(
      "step one is here today. step two is here today.", tokenize);
  REQUIRE(steps.size() == 2);
  CHECK(steps[0].raw_text == "step one is here today. ");
  CHECK(steps[1].raw_text == "step two is here today.");
}

TEST_CASE("segment without delimiters yields one step") {
  const auto tokenize = trace::make_whitespace_tokenizer();
  const auto steps = trace::segment("abcdef", tokenize);
  REQUIRE(steps.size() == 1);
  CHECK(steps[0].raw_text == "abcdef");
}

TEST_CASE("segment splits on newline when both sides are long enough") {
  const auto tokenize = trace::make_whitespace_tokenizer();
  const auto steps = trace::segment(
      "one two three four five\nsix seven eight nine ten", tokenize);
  REQUIRE(steps.size() == 2);
  CHECK(steps[0].raw_text == "one two three four five\n");
}

TEST_CASE("segment merges short trailing fragments into the preceding step") {
  const auto tokenize = trace::make_whitespace_tokenizer();
  const auto steps =
      trace::segment("one two three four five\nsix seven\n", tokenize);
  REQUIRE(steps.size() == 1);
  CHECK(steps[0].raw_text == "one two three four five\nsix seven\n");
}

TEST_CASE("segment rejects empty and token-free input") {
  const auto tokenize = trace::make_whitespace_tokenizer();
  CHECK_THROWS_AS(trace::segment("", tokenize), DegenerateTrajectoryError);
  CHECK_THROWS_AS(trace::segment("\n\n \n", tokenize), DegenerateTrajectoryError);
}

TEST_CASE("segment round-trips byte-for-byte on a randomized corpus") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::string text = random_delimited_text(rng);
    const auto tokenize = trace::make_whitespace_tokenizer();
    const auto steps = trace::segment(text, tokenize);
    CHECK(join_steps(steps) == text);
    for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
      CHECK(!steps[i].raw_text.empty());
    }
  }
}

TEST_CASE("evaluate_confidence computes pairwise gains") {
  const std::vector<double> logp = {-3.0, -2.0, -2.5, -1.0};
  const auto traj = trajectory_with_steps(3);
  const trace::PrefixScorer scorer =
      [&](std::span<const trace::ReasoningStep> prefix) {
        return logp[prefix.size()];
      };
  const auto series = trace::evaluate_confidence(traj, scorer);
  REQUIRE(series.logp.size() == 4);
  REQUIRE(series.gains.size() == 3);
  CHECK(series.gains[0] == doctest::Approx(1.0));
  CHECK(series.gains[1] == doctest::Approx(-0.5));
  CHECK(series.gains[2] == doctest::Approx(1.5));
}

TEST_CASE("evaluate_confidence with a constant scorer gives zero gains") {
  const auto traj = trajectory_with_steps(4);
  const trace::PrefixScorer scorer =
      [](std::span<const trace::ReasoningStep>) { return -2.0; };
  const auto series = trace::evaluate_confidence(traj, scorer);
  for (double gain : series.gains) CHECK(gain == 0.0);
}

TEST_CASE("evaluate_confidence rejects invalid scorer outputs") {
  const auto traj = trajectory_with_steps(2);
  const trace::PrefixScorer positive =
      [](std::span<const trace::ReasoningStep>) { return 0.5; };
  CHECK_THROWS_AS(trace::evaluate_confidence(traj, positive),
                  NumericalDomainError);
  const trace::PrefixScorer nan_scorer =
      [](std::span<const trace::ReasoningStep>) { return std::nan(""); };
  CHECK_THROWS_AS(trace::evaluate_confidence(traj, nan_scorer),
                  NumericalDomainError);
  const trace::Trajectory empty;
  const trace::PrefixScorer ok =
      [](std::span<const trace::ReasoningStep>) { return -1.0; };
  CHECK_THROWS_AS(trace::evaluate_confidence(empty, ok),
                  DegenerateTrajectoryError);
}

TEST_CASE("evaluate_confidence is deterministic") {
  const auto traj = trajectory_with_steps(5);
  const trace::PrefixScorer scorer =
      [](std::span<const trace::ReasoningStep> prefix) {
        return -1.0 - 0.37 * static_cast<double>(prefix.size());
      };
  const auto a = trace::evaluate_confidence(traj, scorer);
  const auto b = trace::evaluate_confidence(traj, scorer);
  CHECK(a.logp == b.logp);
  CHECK(a.gains == b.gains);
}

TEST_CASE("telescoping identity holds on random series") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int num_steps = 1 + static_cast<int>(rng() % 12);
    std::vector<double> logp(static_cast<std::size_t>(num_steps) + 1);
    for (auto& lp : logp) {
      lp = -1e-3 - 30.0 * static_cast<double>(rng() % 1000) / 1000.0;
    }
    const auto traj = trajectory_with_steps(num_steps);
    const trace::PrefixScorer scorer =
        [&](std::span<const trace::ReasoningStep> prefix) {
          return logp[prefix.size()];
        };
    const auto series = trace::evaluate_confidence(traj, scorer);
    double sum = 0.0;
    for (double gain : series.gains) sum += gain;
    const double expected = series.logp.back() - series.logp.front();
    CHECK(std::abs(sum - expected) <=
          1e-12 * std::max(1.0, std::abs(expected)));
  }
}

TEST_CASE("consistency counts strictly positive gains") {
  trace::StepConfidenceSeries series;
  series.gains = {1.0, -1.0, 2.0, 0.5};
  CHECK(trace::consistency(series) == doctest::Approx(0.75));
  series.gains = {-1.0, -2.0};
  CHECK(trace::consistency(series) == doctest::Approx(0.0));
  series.gains = {0.0, 1.0};
  CHECK(trace::consistency(series) == doctest::Approx(0.5));
  series.gains = {1.0, 0.1};
  CHECK(trace::consistency(series) == doctest::Approx(1.0));
  series.gains.clear();
  CHECK_THROWS_AS(trace::consistency(series), DegenerateTrajectoryError);
}
