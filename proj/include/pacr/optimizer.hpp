#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pacr/analysis.hpp"
#include "pacr/env.hpp"
#include "pacr/reward.hpp"

namespace pacr::opt {

/// Family default initial weights: the answer head starts out trusting the
/// claimed running value, everything else is neutral.
Eigen::VectorXd default_init_mean();

struct TrainConfig {
  reward::ShapingConfig shaping;
  double learning_rate = 0.25;
  int batch_size = 4;   // groups per update
  int total_updates = 200;
  int eval_cadence = 1;
  std::uint64_t seed = 1;
  double init_noise = 0.3;  // stddev of the initial parameter perturbation
  Eigen::VectorXd init_mean = default_init_mean();
  double temperature = 1.0;
  std::string answer_prefix = "So the final answer is \\boxed{";
  bool record_rollouts = false;  // keep per-trajectory log records

  void validate() const;  // throws ConfigError
};

struct UpdateMetrics {
  int update = 0;
  double mean_terminal_reward = 0.0;
  double heldout_accuracy = 0.0;
  double mean_consistency = 0.0;
  double clip_fraction = 0.0;
  double mean_abs_gain = 0.0;
};

struct TrainState {
  env::PolicySnapshot policy;
  env::PolicySnapshot old_policy;  // behavior policy of the current batch
  env::PolicySnapshot ref_policy;  // reference for the KL penalty
  int step_count = 0;
  std::mt19937_64 rng;
};

TrainState init_train_state(const TrainConfig& cfg);

/// A rollout group together with the task it was sampled from.
struct CollectedGroup {
  const env::TaskInstance* task = nullptr;
  reward::RolloutGroup group;
};

/// Samples N trajectories from the behavior policy, re-segments the rendered
/// reasoning text, attaches the exact confidence series and terminal rewards.
reward::RolloutGroup collect_group(const env::TaskInstance& task,
                                   TrainState& state, const TrainConfig& cfg);

struct SurrogateEval {
  double objective = 0.0;
  Eigen::VectorXd gradient = Eigen::VectorXd::Zero(env::kNumFeatures);
  long clipped_segments = 0;
  long total_segments = 0;

  double clip_fraction() const {
    return total_segments == 0
               ? 0.0
               : static_cast<double>(clipped_segments) /
                     static_cast<double>(total_segments);
  }
};

/// Clipped surrogate objective and its analytic gradient at `policy`, with
/// ratios against `old_policy`. Token-sum form (no length normalization).
/// Scalar-advantage variants use one trajectory-level ratio; dense variants
/// use per-step ratios with the group's per-step advantages. The KL penalty
/// term enters when cfg.shaping.kl_beta > 0.
SurrogateEval evaluate_surrogate(std::span<const CollectedGroup> batch,
                                 const env::PolicySnapshot& policy,
                                 const env::PolicySnapshot& old_policy,
                                 const env::PolicySnapshot& ref_policy,
                                 const TrainConfig& cfg);

/// One gradient-ascent step on the surrogate. Throws NumericalDomainError
/// with a diagnostic dump if the gradient is not finite.
SurrogateEval surrogate_update(std::span<const CollectedGroup> batch,
                               TrainState& state, const TrainConfig& cfg);

/// Fraction of eval tasks answered correctly by greedy decoding.
double greedy_accuracy(std::span<const env::TaskInstance> tasks,
                       const env::PolicySnapshot& policy);

struct TrainResult {
  std::vector<UpdateMetrics> metrics;
  std::vector<Eigen::VectorXd> param_history;  // params after each update
  env::PolicySnapshot final_policy;
  std::vector<analysis::TrajectoryLogRecord> rollout_records;
};

/// Full deterministic training run: rollout groups round-robin over the
/// train tasks, one ascent step per batch, per-update metrics.
TrainResult train(const env::TaskSuite& suite, const TrainConfig& cfg);

/// CSV with one row per update: update, mean_terminal_reward,
/// heldout_accuracy, mean_consistency, clip_fraction, mean_abs_gain.
std::string metrics_csv(std::span<const UpdateMetrics> metrics);

/// Converts an evaluated trajectory into an analysis log record.
analysis::TrajectoryLogRecord to_log_record(const trace::Trajectory& traj,
                                            double terminal_reward);

/// Samples n trajectories per task from a fixed policy and returns their log
/// records (used for the observational pipeline).
std::vector<analysis::TrajectoryLogRecord> sample_log_records(
    std::span<const env::TaskInstance> tasks, const env::PolicySnapshot& policy,
    int per_task, std::uint64_t seed);

}  // namespace pacr::opt
