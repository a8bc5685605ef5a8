#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pacr/trace.hpp"

namespace pacr::env {

// ============================================================================
// Chain-arithmetic task family
// ============================================================================
//
// A question encodes a start value and a chain of modular integer operations.
// The policy emits one derivation step per operation slot (a claimed running
// value), may begin answer emission after the first step, and must answer once
// the horizon is reached. Slots flagged as distractors must be skipped: the
// correct step for them carries the previous value unchanged. The verifiable
// answer is the value after applying all non-distractor operations in order.
//
// Everything is small and discrete, so next-token distributions, prefix
// confidences, and policy gradients are exact.

enum class OpKind { kAdd, kSub, kMul };

std::string_view op_surface(OpKind kind, bool distractor);
int apply_op(OpKind kind, int operand, int value, int modulus);

struct Operation {
  OpKind kind = OpKind::kAdd;
  int operand = 0;
  bool distractor = false;
};

/// Token table: value tokens first, then a real/distractor token pair per
/// operation kind, then the answer marker and the question separator.
struct Vocabulary {
  int num_values = 0;
  std::vector<OpKind> kinds;

  int size() const { return num_values + 2 * static_cast<int>(kinds.size()) + 2; }
  int value_token(int v) const { return v; }
  int op_token(OpKind kind, bool distractor) const;
  int ans_token() const { return num_values + 2 * static_cast<int>(kinds.size()); }
  int sep_token() const { return ans_token() + 1; }
  trace::Token token(int id) const;
};

struct TaskInstance {
  std::string question_id;
  Vocabulary vocab;
  int modulus = 0;      // claimed values live in [0, modulus)
  int answer_base = 0;  // modulus == answer_base^answer_width
  int answer_width = 1;
  int horizon = 0;
  int start_value = 0;
  std::vector<Operation> ops;  // ops[p] is the operation of step p+1

  std::vector<trace::Token> question_tokens;
  std::vector<trace::Token> gt_answer;  // answer digits, most significant first
  int gt_answer_value = 0;

  /// Value produced by applying slot `position`'s operation literally.
  int literal_next(int position, int value) const;
  /// Value of the correct derivation step: distractor slots carry the value.
  int correct_next(int position, int value) const;
  /// Base-answer_base digit of `value` at `slot` (most significant first).
  int answer_digit(int value, int slot) const;

  /// Recomputes question_tokens, gt_answer, gt_answer_value from the
  /// structured fields and validates the instance. Throws ConfigError.
  void finalize();
};

// ============================================================================
// Policy
// ============================================================================

/// Weight indices of the linear-softmax policy. The feature map is fixed per
/// family; see step_features / answer_digit_features.
enum Feature : int {
  kFeatCorrect = 0,      // emitted value equals the correct next value
  kFeatLiteral = 1,      // emitted value applies the slot's op literally
  kFeatCarry = 2,        // emitted value repeats the current value
  kFeatAnswerEarly = 3,  // begins answer emission before the horizon
  kFeatAnswerMatch = 4,  // answer digit matches the claimed value's digit
  kFeatAnswerAnchor = 5, // answer digit matches the start value's digit
};
inline constexpr int kNumFeatures = 6;

struct PolicySnapshot {
  Eigen::VectorXd params = Eigen::VectorXd::Zero(kNumFeatures);
  double temperature = 1.0;
};

/// Derivation state after `position` accepted steps; value is the claimed
/// running value (start_value at position 0).
struct DerivationState {
  int position = 0;
  int value = 0;
};

/// Legal actions at a state, in a fixed order: value emissions 0..M-1 first,
/// then the answer action. Emissions are legal below the horizon; the answer
/// action is legal from position 1 on and is the only action at the horizon.
struct ActionSpace {
  bool can_emit = false;
  bool can_answer = false;
  int num_values = 0;

  int num_actions() const {
    return (can_emit ? num_values : 0) + (can_answer ? 1 : 0);
  }
  int answer_index() const { return can_emit ? num_values : 0; }
  bool is_answer(int index) const { return can_answer && index == answer_index(); }
};

ActionSpace action_space(const TaskInstance& task, int position);

/// Numerically stable softmax.
Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits);

/// Feature rows for every legal action at a state (num_actions x kNumFeatures).
Eigen::MatrixXd step_features(const TaskInstance& task, const DerivationState& s);
Eigen::VectorXd step_distribution(const TaskInstance& task,
                                  const PolicySnapshot& policy,
                                  const DerivationState& s);

/// Feature rows for the answer digit emitted at `slot` (answer_base x kNumFeatures).
Eigen::MatrixXd answer_digit_features(const TaskInstance& task,
                                      const DerivationState& s, int slot);
Eigen::VectorXd answer_digit_distribution(const TaskInstance& task,
                                          const PolicySnapshot& policy,
                                          const DerivationState& s, int slot);

/// Distribution over full answer values emitted if the answer began now
/// (product of the per-digit softmaxes).
Eigen::VectorXd immediate_answer_distribution(const TaskInstance& task,
                                              const PolicySnapshot& policy,
                                              const DerivationState& s);

// ============================================================================
// Exact confidence and the answer-conditioned (oracle) policy
// ============================================================================

/// Exact posterior over the finally emitted answer value from every
/// derivation state, by backward induction over the finite state space.
/// This is the ground-truth confidence scorer: measuring the answer
/// probability after the answer prefix equals conditioning the generative
/// process on answer emission from the current state.
class ConfidenceOracle {
 public:
  ConfidenceOracle(const TaskInstance& task, const PolicySnapshot& policy);

  /// p(final emitted answer value = y | state), one entry per value.
  Eigen::VectorXd answer_posterior(const DerivationState& s) const;

  /// log p(Y_gt | q, prefix state), summed over per-token conditionals.
  double gt_answer_logprob(const DerivationState& s) const;

  /// Same, for a prefix of rendered reasoning steps.
  double gt_answer_logprob(std::span<const trace::ReasoningStep> prefix) const;

  const TaskInstance& task() const { return *task_; }

 private:
  const TaskInstance* task_;
  PolicySnapshot policy_;
  // table_[p](v, y) = p(final answer = y | position p, value v)
  std::vector<Eigen::MatrixXd> table_;
};

/// One-shot form of the exact scorer: log p(Y_gt | q, prefix) as the sum of
/// per-token conditional log-probs of the ground-truth answer tokens.
/// Throws StructuralError for prefixes the environment cannot produce.
double enumerate_answer_prob(const TaskInstance& task,
                             const PolicySnapshot& policy,
                             std::span<const trace::ReasoningStep> prefix);

/// Exact Bayes inversion: pi(h | q, Y_gt, H_<k) over the legal actions at the
/// prefix state, proportional to pi(h | prefix) * p(Y_gt | prefix + h).
/// Throws NumericalDomainError when p(Y_gt | prefix) = 0.
Eigen::VectorXd oracle_step_distribution(
    const TaskInstance& task, const PolicySnapshot& policy,
    std::span<const trace::ReasoningStep> prefix);

/// State-level core of oracle_step_distribution, reusing a prebuilt oracle.
Eigen::VectorXd oracle_step_distribution_at(const TaskInstance& task,
                                            const PolicySnapshot& policy,
                                            const DerivationState& s,
                                            const ConfidenceOracle& oracle,
                                            bool break_bayes = false);

// ============================================================================
// Rollouts
// ============================================================================

/// Text rendered for the derivation step at 1-based `position` claiming
/// `value`. Six whitespace tokens and a trailing newline, so segmentation
/// reproduces step boundaries exactly and never merges.
std::string step_text(int position, int value);

/// Emitted values of a rendered step prefix. Throws StructuralError on
/// malformed text, position mismatch, or out-of-range values.
std::vector<int> parse_step_values(const TaskInstance& task,
                                   std::span<const trace::ReasoningStep> prefix);

DerivationState state_after_prefix(const TaskInstance& task,
                                   std::span<const trace::ReasoningStep> prefix);

/// Samples one trajectory. Deterministic given (task, policy params, seed);
/// sampling uses inverse-CDF over exact distributions so replay is
/// platform-independent.
trace::Trajectory rollout(const TaskInstance& task, const PolicySnapshot& policy,
                          std::uint64_t rng_seed);

/// Argmax decode (ties break toward the lowest action index).
trace::Trajectory greedy_rollout(const TaskInstance& task,
                                 const PolicySnapshot& policy);

// ============================================================================
// Trajectory log-probability and exact gradient
// ============================================================================

struct SegmentEval {
  double logp = 0.0;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(kNumFeatures);
};

struct TrajectoryEval {
  std::vector<SegmentEval> steps;  // one per reasoning step
  SegmentEval answer_span;         // answer decision plus digit emissions

  double total_logp() const;
  Eigen::VectorXd total_grad() const;
};

/// Per-segment log-probs and exact gradients w.r.t. the policy parameters.
/// Throws StructuralError if the trajectory is outside the policy's support.
TrajectoryEval evaluate_trajectory(const TaskInstance& task,
                                   const PolicySnapshot& policy,
                                   const trace::Trajectory& traj);

/// log pi_theta(tau | q) and its exact analytic gradient.
std::pair<double, Eigen::VectorXd> policy_logprob_and_grad(
    const TaskInstance& task, const PolicySnapshot& policy,
    const trace::Trajectory& traj);

// ============================================================================
// Task suites
// ============================================================================

enum class SuiteSize { kSmall, kMedium, kLarge };

struct TaskSuite {
  int version = 1;
  std::string name;
  int difficulty = 0;
  std::vector<TaskInstance> train_tasks;
  std::vector<TaskInstance> eval_tasks;
};

TaskInstance make_task(SuiteSize size, int difficulty, std::string question_id,
                       std::mt19937_64& rng);
TaskSuite make_suite(SuiteSize size, int difficulty, std::uint64_t seed,
                     int num_train, int num_eval);

/// Canonical shipped suites: "small" (vocab 8, horizon 4), "medium"
/// (vocab 16, horizon 6), "large" (vocab 32, horizon 8).
TaskSuite builtin_suite(std::string_view name);

std::string suite_to_json(const TaskSuite& suite, bool pretty = true);
void save_suite(const TaskSuite& suite, const std::filesystem::path& path);
TaskSuite load_suite(const std::filesystem::path& path);

/// FNV-1a over the compact canonical serialization.
std::uint64_t suite_hash(const TaskSuite& suite);

// ============================================================================
// Proposition check: E_oracle[C_k] = KL(oracle || base) >= 0
// ============================================================================

struct PropositionCheck {
  double max_abs_gap = 0.0;
  double min_expected_gain = std::numeric_limits<double>::infinity();
  long cases = 0;
  std::string worst_gap_case;
  std::string worst_gain_case;

  bool pass(double gap_tol = 1e-9, double neg_tol = -1e-12) const {
    return max_abs_gap <= gap_tol && min_expected_gain >= neg_tol;
  }
};

/// Checks the KL identity and non-negativity of the expected stepwise gain
/// under the answer-conditioned policy, over every reachable prefix state of
/// every task and `draws` random policy parameter draws. `break_bayes` is a
/// test hook that corrupts the inversion and must make the check fail.
PropositionCheck verify_proposition(std::span<const TaskInstance> tasks,
                                    int draws, std::uint64_t seed,
                                    bool break_bayes = false);

}  // namespace pacr::env
