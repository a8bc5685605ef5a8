#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pacr::trace {

/// A token: an index into some finite vocabulary plus its surface text.
struct Token {
  int id = 0;
  std::string surface;
};

/// One reasoning step: the tokens and the exact byte range of raw text it
/// covers (delimiters included, so concatenating steps reproduces the input).
struct ReasoningStep {
  std::vector<Token> tokens;
  std::string raw_text;
};

/// Confidence in the ground-truth answer along a trajectory, in nats.
/// logp[k] = log p(Y_gt | q, H_<=k) for k = 0..T (index 0 = empty prefix);
/// gains[k-1] = C_k = logp[k] - logp[k-1].
struct StepConfidenceSeries {
  std::vector<double> logp;
  std::vector<double> gains;

  int num_steps() const { return static_cast<int>(gains.size()); }
};

struct Trajectory {
  std::string question_id;
  std::vector<ReasoningStep> steps;
  std::vector<Token> predicted_answer;
  std::vector<Token> gt_answer;
  std::optional<StepConfidenceSeries> confidence;
  bool answered = true;

  int num_steps() const { return static_cast<int>(steps.size()); }
  /// Concatenated raw text of all reasoning steps.
  std::string reasoning_text() const;
};

using Tokenizer = std::function<std::vector<Token>(std::string_view)>;

/// Whitespace tokenizer that interns each distinct word into a growing
/// vocabulary (ids are assigned in first-seen order and shared across calls
/// through the returned closure).
Tokenizer make_whitespace_tokenizer();

/// Fragments shorter than this many tokens are merged into a neighbor.
inline constexpr int kMinStepTokens = 5;

/// Splits raw reasoning text into steps. A boundary falls after every
/// newline and after every period immediately followed by a space; a
/// fragment with fewer than kMinStepTokens tokens merges into the preceding
/// step (leading short fragments merge into the following one). The steps
/// partition raw_text byte-for-byte.
///
/// Throws DegenerateTrajectoryError when raw_text is empty or contains no
/// tokens at all.
std::vector<ReasoningStep> segment(std::string_view raw_text,
                                   const Tokenizer& tokenize);

/// Scores log p(Y_gt | q, prefix) for a prefix of reasoning steps.
using PrefixScorer = std::function<double(std::span<const ReasoningStep>)>;

/// Evaluates the scorer on every prefix H_<=k, k = 0..T, and returns the
/// confidence series. Throws NumericalDomainError if the scorer returns a
/// positive or non-finite log-prob, DegenerateTrajectoryError if T = 0.
StepConfidenceSeries evaluate_confidence(const Trajectory& traj,
                                         const PrefixScorer& scorer);

/// Proportion of steps with strictly positive confidence gain,
/// (1/T) * sum_k 1(C_k > 0). Zero gains do not count.
double consistency(const StepConfidenceSeries& series);

}  // namespace pacr::trace
