#include "pacr/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "pacr/errors.hpp"

namespace pacr::reward {

std::string_view variant_name(Variant variant) {
  switch (variant) {
    case Variant::kBaseline: return "baseline";
    case Variant::kSparse: return "sparse";
    case Variant::kDenseMinMax: return "dense-minmax";
    case Variant::kDenseLoo: return "dense-loo";
  }
  throw ConfigError("unknown variant");
}

Variant parse_variant(std::string_view name) {
  if (name == "baseline") return Variant::kBaseline;
  if (name == "sparse") return Variant::kSparse;
  if (name == "dense-minmax") return Variant::kDenseMinMax;
  if (name == "dense-loo") return Variant::kDenseLoo;
  throw ConfigError("unknown variant: " + std::string(name));
}

void ShapingConfig::validate() const {
  if (lambda1 < 0.0 || lambda2 < 0.0) {
    throw ConfigError("lambda weights must be non-negative");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw ConfigError("gamma must be in (0, 1]");
  }
  if (group_size < 2) throw ConfigError("group size must be >= 2");
  if (!(clip_eps > 0.0)) throw ConfigError("clip epsilon must be positive");
  if (kl_beta < 0.0) throw ConfigError("kl beta must be non-negative");
}

// ----------------------------------------------------------------------------
// Terminal reward
// ----------------------------------------------------------------------------

namespace {

bool is_trim_punct(char c) {
  return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' ||
         c == '?' || c == '"' || c == '\'' || c == '$';
}

std::string_view trim_whitespace(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return s;
}

bool parse_number(const std::string& s, double* out) {
  if (s.empty()) return false;
  char* end = nullptr;
  const double value = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) return false;
  *out = value;
  return true;
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string_view s = trim_whitespace(text);
  if (s.starts_with("\\boxed{") && s.ends_with("}")) {
    s = trim_whitespace(s.substr(7, s.size() - 8));
  }
  std::string folded;
  folded.reserve(s.size());
  for (char c : s) {
    folded.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  std::string_view f = folded;
  while (!f.empty() && is_trim_punct(f.front())) f.remove_prefix(1);
  while (!f.empty() && is_trim_punct(f.back())) f.remove_suffix(1);
  std::string out;
  out.reserve(f.size());
  for (char c : f) {
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  }
  return out;
}

bool is_equivalent(std::string_view predicted, std::string_view gt) {
  const std::string a = normalize_answer(predicted);
  const std::string b = normalize_answer(gt);
  double na = 0.0;
  double nb = 0.0;
  if (parse_number(a, &na) && parse_number(b, &nb)) {
    return std::abs(na - nb) <= 1e-9;
  }
  return a == b;
}

double terminal_reward(std::span<const trace::Token> predicted,
                       std::span<const trace::Token> gt) {
  if (predicted.empty()) return 0.0;
  std::string pred_text;
  for (const auto& token : predicted) pred_text += token.surface;
  std::string gt_text;
  for (const auto& token : gt) gt_text += token.surface;
  return is_equivalent(pred_text, gt_text) ? 1.0 : 0.0;
}

// ----------------------------------------------------------------------------
// Advantages
// ----------------------------------------------------------------------------

namespace {

// Shared Dr.GRPO centering; every variant routes through this one helper so
// the lambda2 = 0 reduction reproduces baseline values bit-for-bit.
std::vector<double> centered(std::span<const double> rewards) {
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) /
                      static_cast<double>(rewards.size());
  std::vector<double> advantages(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    advantages[i] = rewards[i] - mean;
  }
  return advantages;
}

void require_group(const RolloutGroup& group) {
  if (group.size() < 2) {
    throw ConfigError("rollout group must contain at least 2 trajectories");
  }
  if (group.terminal_rewards.size() != group.trajectories.size()) {
    throw StateError("terminal rewards not aligned with trajectories");
  }
}

const trace::StepConfidenceSeries& confidence_of(const trace::Trajectory& traj) {
  if (!traj.confidence.has_value()) {
    throw StateError("trajectory has no confidence series");
  }
  return *traj.confidence;
}

// All per-trajectory dense returns plus the longest step count.
std::pair<std::vector<std::vector<double>>, std::size_t> group_returns(
    const RolloutGroup& group, double gamma) {
  std::vector<std::vector<double>> returns;
  returns.reserve(group.trajectories.size());
  std::size_t max_steps = 0;
  for (const auto& traj : group.trajectories) {
    returns.push_back(dense_returns(traj, gamma));
    max_steps = std::max(max_steps, returns.back().size());
  }
  return {std::move(returns), max_steps};
}

double return_or_zero(const std::vector<double>& returns, std::size_t k) {
  return k < returns.size() ? returns[k] : 0.0;
}

AdvantageAssignment combine_dense(const RolloutGroup& group,
                                  const ShapingConfig& cfg, Variant variant,
                                  const std::vector<std::vector<double>>& step_part) {
  AdvantageAssignment assignment;
  assignment.variant = variant;
  const auto grpo = centered(group.terminal_rewards);
  assignment.trajectory_advantage.resize(grpo.size());
  assignment.step_advantages.resize(grpo.size());
  for (std::size_t i = 0; i < grpo.size(); ++i) {
    assignment.trajectory_advantage[i] = cfg.lambda1 * grpo[i];
    assignment.step_advantages[i].resize(step_part[i].size());
    for (std::size_t k = 0; k < step_part[i].size(); ++k) {
      assignment.step_advantages[i][k] =
          cfg.lambda1 * grpo[i] + cfg.lambda2 * step_part[i][k];
    }
  }
  return assignment;
}

}  // namespace

double sparse_consistency_reward(const trace::Trajectory& traj) {
  return trace::consistency(confidence_of(traj));
}

AdvantageAssignment baseline_advantages(const RolloutGroup& group) {
  require_group(group);
  AdvantageAssignment assignment;
  assignment.variant = Variant::kBaseline;
  assignment.trajectory_advantage = centered(group.terminal_rewards);
  return assignment;
}

AdvantageAssignment sparse_pacr_advantages(const RolloutGroup& group,
                                           const ShapingConfig& cfg) {
  require_group(group);
  std::vector<double> shaped(group.trajectories.size());
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    shaped[i] = cfg.lambda1 * group.terminal_rewards[i] +
                cfg.lambda2 * sparse_consistency_reward(group.trajectories[i]);
  }
  AdvantageAssignment assignment;
  assignment.variant = Variant::kSparse;
  assignment.trajectory_advantage = centered(shaped);
  return assignment;
}

std::vector<double> dense_returns(const trace::Trajectory& traj, double gamma) {
  const auto& gains = confidence_of(traj).gains;
  std::vector<double> returns(gains.size());
  double suffix = 0.0;
  for (std::size_t k = gains.size(); k-- > 0;) {
    suffix = gains[k] + gamma * suffix;
    returns[k] = suffix;
  }
  return returns;
}

std::vector<std::vector<double>> minmax_step_scaling(const RolloutGroup& group,
                                                     double gamma) {
  require_group(group);
  auto [returns, max_steps] = group_returns(group, gamma);
  std::vector<std::vector<double>> scaled(returns.size());
  for (std::size_t i = 0; i < returns.size(); ++i) {
    scaled[i].resize(returns[i].size());
  }
  for (std::size_t k = 0; k < max_steps; ++k) {
    double lo = return_or_zero(returns[0], k);
    double hi = lo;
    for (std::size_t j = 1; j < returns.size(); ++j) {
      const double g = return_or_zero(returns[j], k);
      lo = std::min(lo, g);
      hi = std::max(hi, g);
    }
    for (std::size_t i = 0; i < returns.size(); ++i) {
      if (k >= returns[i].size()) continue;
      // Zero spread carries no process signal for anyone at this step.
      scaled[i][k] = hi == lo ? 0.0 : (returns[i][k] - lo) / (hi - lo);
    }
  }
  return scaled;
}

std::vector<std::vector<double>> loo_step_centering(const RolloutGroup& group,
                                                    double gamma) {
  require_group(group);
  auto [returns, max_steps] = group_returns(group, gamma);
  const auto n = returns.size();
  std::vector<std::vector<double>> centered_out(n);
  for (std::size_t i = 0; i < n; ++i) centered_out[i].resize(returns[i].size());
  for (std::size_t k = 0; k < max_steps; ++k) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += return_or_zero(returns[j], k);
    for (std::size_t i = 0; i < n; ++i) {
      if (k >= returns[i].size()) continue;
      const double own = returns[i][k];
      centered_out[i][k] = own - (total - own) / static_cast<double>(n - 1);
    }
  }
  return centered_out;
}

AdvantageAssignment dense_minmax_advantages(const RolloutGroup& group,
                                            const ShapingConfig& cfg) {
  return combine_dense(group, cfg, Variant::kDenseMinMax,
                       minmax_step_scaling(group, cfg.gamma));
}

AdvantageAssignment dense_loo_advantages(const RolloutGroup& group,
                                         const ShapingConfig& cfg) {
  return combine_dense(group, cfg, Variant::kDenseLoo,
                       loo_step_centering(group, cfg.gamma));
}

AdvantageAssignment compute_advantages(const RolloutGroup& group,
                                       const ShapingConfig& cfg) {
  switch (cfg.variant) {
    case Variant::kBaseline: return baseline_advantages(group);
    case Variant::kSparse: return sparse_pacr_advantages(group, cfg);
    case Variant::kDenseMinMax: return dense_minmax_advantages(group, cfg);
    case Variant::kDenseLoo: return dense_loo_advantages(group, cfg);
  }
  throw ConfigError("unknown variant");
}

}  // namespace pacr::reward
