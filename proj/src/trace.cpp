#include "pacr/trace.hpp"

#include <cmath>
#include <map>
#include <memory>

#include "pacr/errors.hpp"

namespace pacr::trace {

std::string Trajectory::reasoning_text() const {
  std::string out;
  for (const auto& step : steps) out += step.raw_text;
  return out;
}

Tokenizer make_whitespace_tokenizer() {
  auto table = std::make_shared<std::map<std::string, int, std::less<>>>();
  return [table](std::string_view text) {
    std::vector<Token> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
      while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      std::size_t start = i;
      while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
      if (i > start) {
        std::string word(text.substr(start, i - start));
        auto [it, inserted] =
            table->try_emplace(std::move(word), static_cast<int>(table->size()));
        tokens.push_back(Token{it->second, it->first});
      }
    }
    return tokens;
  };
}

namespace {

// Raw fragments between delimiters; each delimiter stays with the fragment
// to its left so the pieces partition the input.
std::vector<std::string_view> split_fragments(std::string_view text) {
  std::vector<std::string_view> fragments;
  std::size_t start = 0;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '\n') {
      fragments.push_back(text.substr(start, i + 1 - start));
      start = ++i;
    } else if (text[i] == '.' && i + 1 < text.size() && text[i + 1] == ' ') {
      fragments.push_back(text.substr(start, i + 2 - start));
      start = i += 2;
    } else {
      ++i;
    }
  }
  if (start < text.size()) fragments.push_back(text.substr(start));
  return fragments;
}

}  // namespace

std::vector<ReasoningStep> segment(std::string_view raw_text,
                                   const Tokenizer& tokenize) {
  if (raw_text.empty()) {
    throw DegenerateTrajectoryError("empty reasoning emission");
  }

  const auto fragments = split_fragments(raw_text);

  // Merge pass. Short fragments attach to the preceding step; a run of
  // leading short fragments is held back and attaches to the first full
  // step instead.
  std::vector<std::string> step_texts;
  std::string pending;
  for (const auto frag : fragments) {
    const auto count = tokenize(frag).size();
    if (count < static_cast<std::size_t>(kMinStepTokens)) {
      if (step_texts.empty()) {
        pending += frag;
      } else {
        step_texts.back() += frag;
      }
    } else {
      if (!pending.empty()) {
        step_texts.push_back(pending + std::string(frag));
        pending.clear();
      } else {
        step_texts.emplace_back(frag);
      }
    }
  }
  if (!pending.empty()) step_texts.push_back(std::move(pending));

  std::vector<ReasoningStep> steps;
  steps.reserve(step_texts.size());
  for (auto& text : step_texts) {
    ReasoningStep step;
    step.tokens = tokenize(text);
    step.raw_text = std::move(text);
    steps.push_back(std::move(step));
  }
  if (steps.size() == 1 && steps.front().tokens.empty()) {
    throw DegenerateTrajectoryError("reasoning emission contains no tokens");
  }
  return steps;
}

StepConfidenceSeries evaluate_confidence(const Trajectory& traj,
                                         const PrefixScorer& scorer) {
  const int num_steps = traj.num_steps();
  if (num_steps == 0) {
    throw DegenerateTrajectoryError("trajectory has no reasoning steps");
  }
  StepConfidenceSeries series;
  series.logp.reserve(static_cast<std::size_t>(num_steps) + 1);
  for (int k = 0; k <= num_steps; ++k) {
    const double lp = scorer(std::span(traj.steps.data(), static_cast<std::size_t>(k)));
    if (std::isnan(lp) || !std::isfinite(lp) || lp > 0.0) {
      throw NumericalDomainError("scorer returned invalid log-prob " +
                                 std::to_string(lp) + " at prefix length " +
                                 std::to_string(k));
    }
    series.logp.push_back(lp);
  }
  series.gains.reserve(static_cast<std::size_t>(num_steps));
  for (int k = 1; k <= num_steps; ++k) {
    series.gains.push_back(series.logp[static_cast<std::size_t>(k)] -
                           series.logp[static_cast<std::size_t>(k) - 1]);
  }
  return series;
}

double consistency(const StepConfidenceSeries& series) {
  if (series.gains.empty()) {
    throw DegenerateTrajectoryError("consistency of a zero-step trajectory");
  }
  int positive = 0;
  for (double gain : series.gains) {
    if (gain > 0.0) ++positive;
  }
  return static_cast<double>(positive) / static_cast<double>(series.gains.size());
}

}  // namespace pacr::trace
