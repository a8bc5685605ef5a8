#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pacr/trace.hpp"

namespace pacr::reward {

enum class Variant { kBaseline, kSparse, kDenseMinMax, kDenseLoo };

std::string_view variant_name(Variant variant);
Variant parse_variant(std::string_view name);

struct ShapingConfig {
  double lambda1 = 0.9;
  double lambda2 = 0.1;
  double gamma = 1.0;
  int group_size = 8;
  Variant variant = Variant::kBaseline;
  double clip_eps = 0.2;
  double kl_beta = 0.0;

  void validate() const;  // throws ConfigError
};

/// N trajectories sampled for one question; the unit over which advantages
/// are normalized.
struct RolloutGroup {
  std::string question_id;
  std::vector<trace::Trajectory> trajectories;
  std::vector<double> terminal_rewards;

  int size() const { return static_cast<int>(trajectories.size()); }
};

/// Credit assignment for one group. trajectory_advantage is defined for all
/// variants: scalar variants broadcast it to every token; dense variants
/// apply it to the answer span while step_advantages[i][k] applies to the
/// tokens of step k+1 of trajectory i.
struct AdvantageAssignment {
  Variant variant = Variant::kBaseline;
  std::vector<double> trajectory_advantage;
  std::vector<std::vector<double>> step_advantages;

  bool per_step() const { return !step_advantages.empty(); }
};

/// Normalization pipeline for answer equivalence: trim whitespace, strip a
/// \boxed{...} wrapper, ASCII case fold, trim surrounding punctuation, drop
/// remaining whitespace.
std::string normalize_answer(std::string_view text);

/// Normalized exact match; numeric strings compare with absolute tolerance
/// 1e-9 after parsing.
bool is_equivalent(std::string_view predicted, std::string_view gt);

/// Binary terminal accuracy reward over token lists.
double terminal_reward(std::span<const trace::Token> predicted,
                       std::span<const trace::Token> gt);

/// Proportion of steps with strictly positive confidence gain. Throws
/// StateError when the trajectory has no confidence series.
double sparse_consistency_reward(const trace::Trajectory& traj);

/// Dr.GRPO advantages: A_i = R_i - mean(R), no std division.
AdvantageAssignment baseline_advantages(const RolloutGroup& group);

/// Sparse shaping: R_i' = lambda1 * R_i + lambda2 * consistency_i, centered
/// against the group mean.
AdvantageAssignment sparse_pacr_advantages(const RolloutGroup& group,
                                           const ShapingConfig& cfg);

/// Discounted suffix sums of the confidence gains, G_k = sum_j gamma^(j-k) C_j.
std::vector<double> dense_returns(const trace::Trajectory& traj, double gamma);

/// Raw Min-Max scaling of the step-k returns across the group (missing steps
/// participate as zero; zero spread maps everyone to 0). One inner list per
/// trajectory, entries only for existing steps.
std::vector<std::vector<double>> minmax_step_scaling(const RolloutGroup& group,
                                                     double gamma);

/// Raw leave-one-out centering of the step-k returns (missing steps
/// participate as zero in the means).
std::vector<std::vector<double>> loo_step_centering(const RolloutGroup& group,
                                                    double gamma);

/// Combined per-step advantages lambda1 * A_grpo + lambda2 * A_step with
/// Min-Max scaled step advantages.
AdvantageAssignment dense_minmax_advantages(const RolloutGroup& group,
                                            const ShapingConfig& cfg);

/// Same combination with the leave-one-out baseline instead of Min-Max.
AdvantageAssignment dense_loo_advantages(const RolloutGroup& group,
                                         const ShapingConfig& cfg);

/// Dispatch on cfg.variant.
AdvantageAssignment compute_advantages(const RolloutGroup& group,
                                       const ShapingConfig& cfg);

}  // namespace pacr::reward
