#include "pacr/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "pacr/errors.hpp"
#include "pacr/seeding.hpp"
#include "pacr/trace.hpp"

namespace pacr::opt {

Eigen::VectorXd default_init_mean() {
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(env::kNumFeatures);
  mean[env::kFeatAnswerMatch] = 1.0;
  return mean;
}

void TrainConfig::validate() const {
  shaping.validate();
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (total_updates < 1) throw ConfigError("total updates must be >= 1");
  if (eval_cadence < 1) throw ConfigError("eval cadence must be >= 1");
  if (init_noise < 0.0) throw ConfigError("init noise must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (init_mean.size() != env::kNumFeatures) {
    throw ConfigError("init mean has wrong dimension");
  }
}

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState state;
  std::mt19937_64 init_rng(
      seeding::stream_seed(cfg.seed, seeding::kStreamPolicyInit));
  env::PolicySnapshot policy;
  policy.temperature = cfg.temperature;
  policy.params = cfg.init_mean;
  for (int i = 0; i < env::kNumFeatures; ++i) {
    // Box-Muller on canonical uniforms keeps initialization replayable.
    const double u1 = std::max(seeding::canonical_uniform(init_rng), 1e-300);
    const double u2 = seeding::canonical_uniform(init_rng);
    policy.params[i] +=
        cfg.init_noise * std::sqrt(-2.0 * std::log(u1)) *
        std::cos(2.0 * M_PI * u2);
  }
  state.policy = policy;
  state.old_policy = policy;
  state.ref_policy = policy;
  state.rng.seed(seeding::stream_seed(cfg.seed, seeding::kStreamRollout));
  return state;
}

reward::RolloutGroup collect_group(const env::TaskInstance& task,
                                   TrainState& state, const TrainConfig& cfg) {
  reward::RolloutGroup group;
  group.question_id = task.question_id;
  const env::ConfidenceOracle oracle(task, state.old_policy);
  const trace::PrefixScorer scorer =
      [&oracle](std::span<const trace::ReasoningStep> prefix) {
        return oracle.gt_answer_logprob(prefix);
      };
  const auto tokenize = trace::make_whitespace_tokenizer();
  for (int n = 0; n < cfg.shaping.group_size; ++n) {
    const std::uint64_t rollout_seed = state.rng();
    auto traj = env::rollout(task, state.old_policy, rollout_seed);
    // Run the rendered text through the segmentation pipeline; the step
    // format guarantees boundaries survive, so this re-derivation is exact.
    traj.steps = trace::segment(traj.reasoning_text(), tokenize);
    traj.confidence = trace::evaluate_confidence(traj, scorer);
    group.terminal_rewards.push_back(
        reward::terminal_reward(traj.predicted_answer, traj.gt_answer));
    group.trajectories.push_back(std::move(traj));
  }
  return group;
}

namespace {

struct ClippedTerm {
  double value = 0.0;        // min(r*A, clip(r)*A)
  double grad_coeff = 0.0;   // d value / d logp_new
  bool clipped = false;      // ratio outside [1-eps, 1+eps]
};

ClippedTerm clipped_term(double ratio, double advantage, double eps) {
  ClippedTerm term;
  const double clipped_ratio = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  term.clipped = ratio < 1.0 - eps || ratio > 1.0 + eps;
  const double unclipped = ratio * advantage;
  const double clipped = clipped_ratio * advantage;
  if (unclipped <= clipped) {
    term.value = unclipped;
    term.grad_coeff = advantage * ratio;
  } else {
    term.value = clipped;
    // The clipped branch is constant in theta exactly when the clamp binds.
    term.grad_coeff = term.clipped ? 0.0 : advantage * ratio;
  }
  return term;
}

// KL(pi_theta(.|s) || pi_ref(.|s)) for one softmax decision, with gradient
// w.r.t. theta accumulated into grad.
double decision_kl(const Eigen::MatrixXd& feats, const Eigen::VectorXd& dist,
                   const Eigen::VectorXd& ref_dist, double temperature,
                   double weight, Eigen::VectorXd& grad) {
  const Eigen::ArrayXd log_ratio =
      dist.array().log() - ref_dist.array().log();
  const double kl = (dist.array() * log_ratio).sum();
  const Eigen::VectorXd weighted = (dist.array() * log_ratio).matrix();
  grad += weight *
          (feats.transpose() * weighted -
           (feats.transpose() * dist) * (dist.dot(weighted.matrix()))) /
          temperature;
  return kl;
}

// Sum of state KLs along one trajectory (step decisions, the answer
// decision, and the answer digit emissions).
double trajectory_kl(const env::TaskInstance& task,
                     const env::PolicySnapshot& policy,
                     const env::PolicySnapshot& ref_policy,
                     const trace::Trajectory& traj, double weight,
                     Eigen::VectorXd& grad) {
  const auto values = env::parse_step_values(task, traj.steps);
  double kl = 0.0;
  env::DerivationState s{0, task.start_value};
  for (std::size_t k = 0; k <= values.size(); ++k) {
    const auto space = env::action_space(task, s.position);
    if (space.num_actions() > 1) {
      const Eigen::MatrixXd feats = env::step_features(task, s);
      const Eigen::VectorXd dist =
          env::softmax(feats * policy.params / policy.temperature);
      const Eigen::VectorXd ref_dist =
          env::softmax(feats * ref_policy.params / ref_policy.temperature);
      kl += decision_kl(feats, dist, ref_dist, policy.temperature, weight, grad);
    }
    if (k < values.size()) s = {s.position + 1, values[k]};
  }
  if (traj.answered) {
    for (int l = 0; l < task.answer_width; ++l) {
      const Eigen::MatrixXd feats = env::answer_digit_features(task, s, l);
      const Eigen::VectorXd dist =
          env::softmax(feats * policy.params / policy.temperature);
      const Eigen::VectorXd ref_dist =
          env::softmax(feats * ref_policy.params / ref_policy.temperature);
      kl += decision_kl(feats, dist, ref_dist, policy.temperature, weight, grad);
    }
  }
  return kl;
}

}  // namespace

SurrogateEval evaluate_surrogate(std::span<const CollectedGroup> batch,
                                 const env::PolicySnapshot& policy,
                                 const env::PolicySnapshot& old_policy,
                                 const env::PolicySnapshot& ref_policy,
                                 const TrainConfig& cfg) {
  SurrogateEval eval;
  if (batch.empty()) return eval;
  const double eps = cfg.shaping.clip_eps;
  const double batch_weight = 1.0 / static_cast<double>(batch.size());

  for (const auto& collected : batch) {
    const auto& task = *collected.task;
    const auto& group = collected.group;
    const auto advantages = reward::compute_advantages(group, cfg.shaping);
    const double weight = batch_weight / static_cast<double>(group.size());

    for (int i = 0; i < group.size(); ++i) {
      const auto& traj = group.trajectories[static_cast<std::size_t>(i)];
      const auto eval_new = env::evaluate_trajectory(task, policy, traj);
      const auto eval_old = env::evaluate_trajectory(task, old_policy, traj);
      const auto idx = static_cast<std::size_t>(i);

      if (!advantages.per_step()) {
        const double ratio =
            std::exp(eval_new.total_logp() - eval_old.total_logp());
        const auto term =
            clipped_term(ratio, advantages.trajectory_advantage[idx], eps);
        eval.objective += weight * term.value;
        eval.total_segments += 1;
        eval.clipped_segments += term.clipped ? 1 : 0;
        const double coeff = weight * term.grad_coeff;
        for (const auto& step : eval_new.steps) eval.gradient += coeff * step.grad;
        eval.gradient += coeff * eval_new.answer_span.grad;
      } else {
        const auto& step_adv = advantages.step_advantages[idx];
        for (std::size_t k = 0; k < eval_new.steps.size(); ++k) {
          const double ratio =
              std::exp(eval_new.steps[k].logp - eval_old.steps[k].logp);
          const auto term = clipped_term(ratio, step_adv[k], eps);
          eval.objective += weight * term.value;
          eval.total_segments += 1;
          eval.clipped_segments += term.clipped ? 1 : 0;
          eval.gradient += weight * term.grad_coeff * eval_new.steps[k].grad;
        }
        const double ratio =
            std::exp(eval_new.answer_span.logp - eval_old.answer_span.logp);
        const auto term =
            clipped_term(ratio, advantages.trajectory_advantage[idx], eps);
        eval.objective += weight * term.value;
        eval.total_segments += 1;
        eval.clipped_segments += term.clipped ? 1 : 0;
        eval.gradient += weight * term.grad_coeff * eval_new.answer_span.grad;
      }

      if (cfg.shaping.kl_beta > 0.0) {
        Eigen::VectorXd kl_grad = Eigen::VectorXd::Zero(env::kNumFeatures);
        const double kl =
            trajectory_kl(task, policy, ref_policy, traj, 1.0, kl_grad);
        eval.objective -= cfg.shaping.kl_beta * weight * kl;
        eval.gradient -= cfg.shaping.kl_beta * weight * kl_grad;
      }
    }
  }
  return eval;
}

SurrogateEval surrogate_update(std::span<const CollectedGroup> batch,
                               TrainState& state, const TrainConfig& cfg) {
  const auto eval = evaluate_surrogate(batch, state.policy, state.old_policy,
                                       state.ref_policy, cfg);
  if (!eval.gradient.allFinite()) {
    std::ostringstream dump;
    dump << "non-finite surrogate gradient at step " << state.step_count
         << "; params=[" << state.policy.params.transpose() << "]"
         << " gradient=[" << eval.gradient.transpose() << "]";
    throw NumericalDomainError(dump.str());
  }
  state.policy.params += cfg.learning_rate * eval.gradient;
  ++state.step_count;
  return eval;
}

double greedy_accuracy(std::span<const env::TaskInstance> tasks,
                       const env::PolicySnapshot& policy) {
  if (tasks.empty()) throw ConfigError("no eval tasks");
  double correct = 0.0;
  for (const auto& task : tasks) {
    const auto traj = env::greedy_rollout(task, policy);
    correct += reward::terminal_reward(traj.predicted_answer, traj.gt_answer);
  }
  return correct / static_cast<double>(tasks.size());
}

analysis::TrajectoryLogRecord to_log_record(const trace::Trajectory& traj,
                                            double terminal_reward) {
  if (!traj.confidence.has_value()) {
    throw StateError("trajectory has no confidence series");
  }
  analysis::TrajectoryLogRecord record;
  record.question_id = traj.question_id;
  record.correct = terminal_reward > 0.5;
  record.logp_empty = traj.confidence->logp.front();
  for (std::size_t k = 0; k < traj.steps.size(); ++k) {
    record.steps.push_back(
        {traj.steps[k].raw_text, traj.confidence->logp[k + 1]});
  }
  return record;
}

std::vector<analysis::TrajectoryLogRecord> sample_log_records(
    std::span<const env::TaskInstance> tasks, const env::PolicySnapshot& policy,
    int per_task, std::uint64_t seed) {
  std::mt19937_64 rng(seeding::stream_seed(seed, seeding::kStreamLogSampling));
  const auto tokenize = trace::make_whitespace_tokenizer();
  std::vector<analysis::TrajectoryLogRecord> records;
  for (const auto& task : tasks) {
    const env::ConfidenceOracle oracle(task, policy);
    const trace::PrefixScorer scorer =
        [&oracle](std::span<const trace::ReasoningStep> prefix) {
          return oracle.gt_answer_logprob(prefix);
        };
    for (int n = 0; n < per_task; ++n) {
      auto traj = env::rollout(task, policy, rng());
      traj.steps = trace::segment(traj.reasoning_text(), tokenize);
      traj.confidence = trace::evaluate_confidence(traj, scorer);
      const double r =
          reward::terminal_reward(traj.predicted_answer, traj.gt_answer);
      records.push_back(to_log_record(traj, r));
    }
  }
  return records;
}

TrainResult train(const env::TaskSuite& suite, const TrainConfig& cfg) {
  cfg.validate();
  if (suite.train_tasks.empty() || suite.eval_tasks.empty()) {
    throw ConfigError("suite needs train and eval tasks");
  }
  TrainState state = init_train_state(cfg);
  TrainResult result;
  double heldout = 0.0;

  for (int update = 0; update < cfg.total_updates; ++update) {
    state.old_policy = state.policy;

    std::vector<CollectedGroup> batch;
    batch.reserve(static_cast<std::size_t>(cfg.batch_size));
    for (int g = 0; g < cfg.batch_size; ++g) {
      const auto task_index = static_cast<std::size_t>(
          (static_cast<long>(update) * cfg.batch_size + g) %
          static_cast<long>(suite.train_tasks.size()));
      const auto& task = suite.train_tasks[task_index];
      batch.push_back({&task, collect_group(task, state, cfg)});
    }

    UpdateMetrics row;
    row.update = update;
    double reward_sum = 0.0;
    double consistency_sum = 0.0;
    double abs_gain_sum = 0.0;
    long trajectory_count = 0;
    long gain_count = 0;
    for (const auto& collected : batch) {
      for (int i = 0; i < collected.group.size(); ++i) {
        reward_sum += collected.group.terminal_rewards[static_cast<std::size_t>(i)];
        const auto& series =
            *collected.group.trajectories[static_cast<std::size_t>(i)].confidence;
        consistency_sum += trace::consistency(series);
        for (double gain : series.gains) {
          abs_gain_sum += std::abs(gain);
          ++gain_count;
        }
        ++trajectory_count;
        if (cfg.record_rollouts) {
          result.rollout_records.push_back(to_log_record(
              collected.group.trajectories[static_cast<std::size_t>(i)],
              collected.group.terminal_rewards[static_cast<std::size_t>(i)]));
        }
      }
    }
    row.mean_terminal_reward = reward_sum / static_cast<double>(trajectory_count);
    row.mean_consistency = consistency_sum / static_cast<double>(trajectory_count);
    row.mean_abs_gain =
        gain_count == 0 ? 0.0 : abs_gain_sum / static_cast<double>(gain_count);

    const auto eval = surrogate_update(batch, state, cfg);
    row.clip_fraction = eval.clip_fraction();

    if (update % cfg.eval_cadence == 0) {
      heldout = greedy_accuracy(suite.eval_tasks, state.policy);
    }
    row.heldout_accuracy = heldout;

    result.metrics.push_back(row);
    result.param_history.push_back(state.policy.params);
  }
  result.final_policy = state.policy;
  return result;
}

std::string metrics_csv(std::span<const UpdateMetrics> metrics) {
  std::ostringstream out;
  out << "update,mean_terminal_reward,heldout_accuracy,mean_consistency,"
         "clip_fraction,mean_abs_gain\n";
  out.precision(12);
  for (const auto& row : metrics) {
    out << row.update << ',' << row.mean_terminal_reward << ','
        << row.heldout_accuracy << ',' << row.mean_consistency << ','
        << row.clip_fraction << ',' << row.mean_abs_gain << '\n';
  }
  return out.str();
}

}  // namespace pacr::opt
