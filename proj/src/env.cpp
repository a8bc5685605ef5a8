#include "pacr/env.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pacr/errors.hpp"
#include "pacr/seeding.hpp"

namespace pacr::env {

using json = nlohmann::ordered_json;

// ----------------------------------------------------------------------------
// Operations and vocabulary
// ----------------------------------------------------------------------------

std::string_view op_surface(OpKind kind, bool distractor) {
  switch (kind) {
    case OpKind::kAdd: return distractor ? "dadd" : "add";
    case OpKind::kSub: return distractor ? "dsub" : "sub";
    case OpKind::kMul: return distractor ? "dmul" : "mul";
  }
  throw ConfigError("unknown op kind");
}

int apply_op(OpKind kind, int operand, int value, int modulus) {
  switch (kind) {
    case OpKind::kAdd: return (value + operand) % modulus;
    case OpKind::kSub: return ((value - operand) % modulus + modulus) % modulus;
    case OpKind::kMul: return (value * operand) % modulus;
  }
  throw ConfigError("unknown op kind");
}

int Vocabulary::op_token(OpKind kind, bool distractor) const {
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] == kind) {
      return num_values + 2 * static_cast<int>(i) + (distractor ? 1 : 0);
    }
  }
  throw ConfigError("op kind not in vocabulary");
}

trace::Token Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw ConfigError("token id out of range");
  if (id < num_values) return {id, std::to_string(id)};
  if (id == ans_token()) return {id, "ans"};
  if (id == sep_token()) return {id, "|"};
  const int rel = id - num_values;
  const auto kind = kinds[static_cast<std::size_t>(rel / 2)];
  return {id, std::string(op_surface(kind, rel % 2 == 1))};
}

// ----------------------------------------------------------------------------
// TaskInstance
// ----------------------------------------------------------------------------

int TaskInstance::literal_next(int position, int value) const {
  const auto& op = ops[static_cast<std::size_t>(position)];
  return apply_op(op.kind, op.operand, value, modulus);
}

int TaskInstance::correct_next(int position, int value) const {
  const auto& op = ops[static_cast<std::size_t>(position)];
  return op.distractor ? value : apply_op(op.kind, op.operand, value, modulus);
}

int TaskInstance::answer_digit(int value, int slot) const {
  int divisor = 1;
  for (int i = 0; i < answer_width - 1 - slot; ++i) divisor *= answer_base;
  return (value / divisor) % answer_base;
}

void TaskInstance::finalize() {
  if (modulus < 1) throw ConfigError("modulus must be >= 1");
  if (horizon < 1) throw ConfigError("horizon must be >= 1");
  if (answer_base < 1 || answer_width < 1) {
    throw ConfigError("invalid answer base/width");
  }
  int pow = 1;
  for (int i = 0; i < answer_width; ++i) pow *= answer_base;
  if (pow != modulus) throw ConfigError("modulus != answer_base^answer_width");
  if (static_cast<int>(ops.size()) != horizon) {
    throw ConfigError("ops count must equal horizon");
  }
  if (start_value < 0 || start_value >= modulus) {
    throw ConfigError("start value out of range");
  }
  if (vocab.num_values != modulus) {
    throw ConfigError("vocabulary values must match modulus");
  }
  for (const auto& op : ops) {
    if (op.operand < 0 || op.operand >= modulus) {
      throw ConfigError("operand out of range");
    }
    vocab.op_token(op.kind, op.distractor);  // kind must be in vocabulary
  }

  question_tokens.clear();
  question_tokens.push_back(vocab.token(vocab.value_token(start_value)));
  question_tokens.push_back(vocab.token(vocab.sep_token()));
  for (const auto& op : ops) {
    question_tokens.push_back(vocab.token(vocab.op_token(op.kind, op.distractor)));
    question_tokens.push_back(vocab.token(vocab.value_token(op.operand)));
  }
  question_tokens.push_back(vocab.token(vocab.sep_token()));

  int value = start_value;
  for (int p = 0; p < horizon; ++p) value = correct_next(p, value);
  gt_answer_value = value;
  gt_answer.clear();
  for (int l = 0; l < answer_width; ++l) {
    gt_answer.push_back(vocab.token(vocab.value_token(answer_digit(value, l))));
  }
}

// ----------------------------------------------------------------------------
// Policy distributions
// ----------------------------------------------------------------------------

ActionSpace action_space(const TaskInstance& task, int position) {
  if (position < 0 || position > task.horizon) {
    throw StructuralError("position outside [0, horizon]");
  }
  ActionSpace space;
  space.num_values = task.modulus;
  space.can_emit = position < task.horizon;
  space.can_answer = position >= 1;
  return space;
}

Eigen::VectorXd softmax(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const double max_logit = logits.maxCoeff();
  Eigen::VectorXd probs = (logits.array() - max_logit).exp();
  return probs / probs.sum();
}

Eigen::MatrixXd step_features(const TaskInstance& task, const DerivationState& s) {
  const auto space = action_space(task, s.position);
  Eigen::MatrixXd feats =
      Eigen::MatrixXd::Zero(space.num_actions(), kNumFeatures);
  if (space.can_emit) {
    const int correct = task.correct_next(s.position, s.value);
    const int literal = task.literal_next(s.position, s.value);
    for (int v = 0; v < task.modulus; ++v) {
      feats(v, kFeatCorrect) = v == correct ? 1.0 : 0.0;
      feats(v, kFeatLiteral) = v == literal ? 1.0 : 0.0;
      feats(v, kFeatCarry) = v == s.value ? 1.0 : 0.0;
    }
  }
  if (space.can_answer && space.can_emit) {
    feats(space.answer_index(), kFeatAnswerEarly) = 1.0;
  }
  return feats;
}

Eigen::VectorXd step_distribution(const TaskInstance& task,
                                  const PolicySnapshot& policy,
                                  const DerivationState& s) {
  const Eigen::MatrixXd feats = step_features(task, s);
  return softmax(feats * policy.params / policy.temperature);
}

Eigen::MatrixXd answer_digit_features(const TaskInstance& task,
                                      const DerivationState& s, int slot) {
  Eigen::MatrixXd feats = Eigen::MatrixXd::Zero(task.answer_base, kNumFeatures);
  const int match = task.answer_digit(s.value, slot);
  const int anchor = task.answer_digit(task.start_value, slot);
  for (int d = 0; d < task.answer_base; ++d) {
    feats(d, kFeatAnswerMatch) = d == match ? 1.0 : 0.0;
    feats(d, kFeatAnswerAnchor) = d == anchor ? 1.0 : 0.0;
  }
  return feats;
}

Eigen::VectorXd answer_digit_distribution(const TaskInstance& task,
                                          const PolicySnapshot& policy,
                                          const DerivationState& s, int slot) {
  const Eigen::MatrixXd feats = answer_digit_features(task, s, slot);
  return softmax(feats * policy.params / policy.temperature);
}

Eigen::VectorXd immediate_answer_distribution(const TaskInstance& task,
                                              const PolicySnapshot& policy,
                                              const DerivationState& s) {
  std::vector<Eigen::VectorXd> digit_dists;
  digit_dists.reserve(static_cast<std::size_t>(task.answer_width));
  for (int l = 0; l < task.answer_width; ++l) {
    digit_dists.push_back(answer_digit_distribution(task, policy, s, l));
  }
  Eigen::VectorXd probs(task.modulus);
  for (int y = 0; y < task.modulus; ++y) {
    double p = 1.0;
    for (int l = 0; l < task.answer_width; ++l) {
      p *= digit_dists[static_cast<std::size_t>(l)][task.answer_digit(y, l)];
    }
    probs[y] = p;
  }
  return probs;
}

// ----------------------------------------------------------------------------
// ConfidenceOracle
// ----------------------------------------------------------------------------

ConfidenceOracle::ConfidenceOracle(const TaskInstance& task,
                                   const PolicySnapshot& policy)
    : task_(&task), policy_(policy) {
  const int num_positions = task.horizon + 1;
  table_.reserve(static_cast<std::size_t>(num_positions));
  table_.assign(static_cast<std::size_t>(num_positions),
                Eigen::MatrixXd::Zero(task.modulus, task.modulus));

  for (int v = 0; v < task.modulus; ++v) {
    table_.back().row(v) =
        immediate_answer_distribution(task, policy, {task.horizon, v}).transpose();
  }
  for (int p = task.horizon - 1; p >= 0; --p) {
    auto& rows = table_[static_cast<std::size_t>(p)];
    const auto& next = table_[static_cast<std::size_t>(p) + 1];
    const auto space = action_space(task, p);
    for (int v = 0; v < task.modulus; ++v) {
      const DerivationState s{p, v};
      const Eigen::VectorXd dist = step_distribution(task, policy, s);
      Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(task.modulus);
      for (int a = 0; a < task.modulus; ++a) acc += dist[a] * next.row(a);
      if (space.can_answer) {
        acc += dist[space.answer_index()] *
               immediate_answer_distribution(task, policy, s).transpose();
      }
      rows.row(v) = acc;
    }
  }
}

Eigen::VectorXd ConfidenceOracle::answer_posterior(const DerivationState& s) const {
  if (s.position < 0 || s.position > task_->horizon || s.value < 0 ||
      s.value >= task_->modulus) {
    throw StructuralError("derivation state out of range");
  }
  return table_[static_cast<std::size_t>(s.position)].row(s.value).transpose();
}

double ConfidenceOracle::gt_answer_logprob(const DerivationState& s) const {
  const Eigen::VectorXd post = answer_posterior(s);
  const auto& task = *task_;
  double logp = 0.0;
  // Per-token conditionals p(y_l | y_<l) = S_l / S_{l-1}, where S_l sums the
  // posterior over answer values whose first l digits match the ground truth.
  for (int l = 0; l < task.answer_width; ++l) {
    double sum_prev = 0.0;
    double sum_cur = 0.0;
    for (int y = 0; y < task.modulus; ++y) {
      bool prefix_match = true;
      for (int m = 0; m < l; ++m) {
        if (task.answer_digit(y, m) != task.answer_digit(task.gt_answer_value, m)) {
          prefix_match = false;
          break;
        }
      }
      if (!prefix_match) continue;
      sum_prev += post[y];
      if (task.answer_digit(y, l) == task.answer_digit(task.gt_answer_value, l)) {
        sum_cur += post[y];
      }
    }
    logp += std::log(sum_cur) - std::log(sum_prev);
  }
  return std::min(logp, 0.0);
}

double ConfidenceOracle::gt_answer_logprob(
    std::span<const trace::ReasoningStep> prefix) const {
  return gt_answer_logprob(state_after_prefix(*task_, prefix));
}

double enumerate_answer_prob(const TaskInstance& task,
                             const PolicySnapshot& policy,
                             std::span<const trace::ReasoningStep> prefix) {
  return ConfidenceOracle(task, policy).gt_answer_logprob(prefix);
}

Eigen::VectorXd oracle_step_distribution_at(const TaskInstance& task,
                                            const PolicySnapshot& policy,
                                            const DerivationState& s,
                                            const ConfidenceOracle& oracle,
                                            bool break_bayes) {
  const auto space = action_space(task, s.position);
  const Eigen::VectorXd base = step_distribution(task, policy, s);
  Eigen::VectorXd gt_given_action(space.num_actions());
  if (space.can_emit) {
    for (int v = 0; v < task.modulus; ++v) {
      gt_given_action[v] = std::exp(
          oracle.gt_answer_logprob({s.position + 1, v}));
    }
  }
  if (space.can_answer) {
    const Eigen::VectorXd imm = immediate_answer_distribution(task, policy, s);
    gt_given_action[space.answer_index()] =
        imm[task.gt_answer_value] / imm.sum();
  }
  if (break_bayes) gt_given_action[0] *= 1.0 + 1e-4;

  Eigen::VectorXd weighted = base.cwiseProduct(gt_given_action);
  const double normalizer = weighted.sum();
  if (!(normalizer > 0.0)) {
    throw NumericalDomainError(
        "conditioning on a zero-probability ground-truth answer");
  }
  return weighted / normalizer;
}

Eigen::VectorXd oracle_step_distribution(
    const TaskInstance& task, const PolicySnapshot& policy,
    std::span<const trace::ReasoningStep> prefix) {
  const ConfidenceOracle oracle(task, policy);
  return oracle_step_distribution_at(task, policy,
                                     state_after_prefix(task, prefix), oracle);
}

// ----------------------------------------------------------------------------
// Rollouts
// ----------------------------------------------------------------------------

std::string step_text(int position, int value) {
  std::ostringstream out;
  out << "after step " << position << " value is " << value << "\n";
  return out.str();
}

namespace {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) words.push_back(word);
  return words;
}

int parse_int(const std::string& word) {
  try {
    std::size_t used = 0;
    const int value = std::stoi(word, &used);
    if (used != word.size()) throw StructuralError("trailing junk in number");
    return value;
  } catch (const std::exception&) {
    throw StructuralError("unparseable number in step text: " + word);
  }
}

int sample_index(const Eigen::VectorXd& dist, std::mt19937_64& rng) {
  const double u = seeding::canonical_uniform(rng);
  double cum = 0.0;
  for (int i = 0; i < dist.size(); ++i) {
    cum += dist[i];
    if (u < cum) return i;
  }
  return static_cast<int>(dist.size()) - 1;
}

int argmax_index(const Eigen::VectorXd& dist) {
  int best = 0;
  for (int i = 1; i < dist.size(); ++i) {
    if (dist[i] > dist[best]) best = i;
  }
  return best;
}

}  // namespace

std::vector<int> parse_step_values(const TaskInstance& task,
                                   std::span<const trace::ReasoningStep> prefix) {
  if (static_cast<int>(prefix.size()) > task.horizon) {
    throw StructuralError("prefix longer than the task horizon");
  }
  std::vector<int> values;
  values.reserve(prefix.size());
  for (std::size_t k = 0; k < prefix.size(); ++k) {
    const auto words = split_words(prefix[k].raw_text);
    if (words.size() != 6 || words[0] != "after" || words[1] != "step" ||
        words[3] != "value" || words[4] != "is") {
      throw StructuralError("malformed step text: " + prefix[k].raw_text);
    }
    if (parse_int(words[2]) != static_cast<int>(k) + 1) {
      throw StructuralError("step position mismatch in: " + prefix[k].raw_text);
    }
    const int value = parse_int(words[5]);
    if (value < 0 || value >= task.modulus) {
      throw StructuralError("step value out of range in: " + prefix[k].raw_text);
    }
    values.push_back(value);
  }
  return values;
}

DerivationState state_after_prefix(const TaskInstance& task,
                                   std::span<const trace::ReasoningStep> prefix) {
  const auto values = parse_step_values(task, prefix);
  DerivationState s{static_cast<int>(values.size()),
                    values.empty() ? task.start_value : values.back()};
  return s;
}

namespace {

trace::Trajectory roll(const TaskInstance& task, const PolicySnapshot& policy,
                       std::mt19937_64* rng) {
  const auto tokenize = trace::make_whitespace_tokenizer();
  trace::Trajectory traj;
  traj.question_id = task.question_id;
  traj.gt_answer = task.gt_answer;
  traj.answered = false;

  DerivationState s{0, task.start_value};
  for (;;) {
    const auto space = action_space(task, s.position);
    if (!space.can_emit) {
      traj.answered = true;  // horizon reached, answer emission is forced
      break;
    }
    const Eigen::VectorXd dist = step_distribution(task, policy, s);
    const int idx = rng ? sample_index(dist, *rng) : argmax_index(dist);
    if (space.is_answer(idx)) {
      traj.answered = true;
      break;
    }
    const std::string text = step_text(s.position + 1, idx);
    traj.steps.push_back({tokenize(text), text});
    s = {s.position + 1, idx};
  }

  if (traj.answered) {
    for (int l = 0; l < task.answer_width; ++l) {
      const Eigen::VectorXd dist = answer_digit_distribution(task, policy, s, l);
      const int d = rng ? sample_index(dist, *rng) : argmax_index(dist);
      traj.predicted_answer.push_back(task.vocab.token(task.vocab.value_token(d)));
    }
  }
  return traj;
}

}  // namespace

trace::Trajectory rollout(const TaskInstance& task, const PolicySnapshot& policy,
                          std::uint64_t rng_seed) {
  std::mt19937_64 rng(rng_seed);
  return roll(task, policy, &rng);
}

trace::Trajectory greedy_rollout(const TaskInstance& task,
                                 const PolicySnapshot& policy) {
  return roll(task, policy, nullptr);
}

// ----------------------------------------------------------------------------
// Trajectory evaluation
// ----------------------------------------------------------------------------

double TrajectoryEval::total_logp() const {
  double total = answer_span.logp;
  for (const auto& step : steps) total += step.logp;
  return total;
}

Eigen::VectorXd TrajectoryEval::total_grad() const {
  Eigen::VectorXd total = answer_span.grad;
  for (const auto& step : steps) total += step.grad;
  return total;
}

namespace {

// Accumulates log pi(a | s) and its gradient for one softmax decision.
void accumulate_decision(const Eigen::MatrixXd& feats,
                         const Eigen::VectorXd& dist, int action,
                         double temperature, SegmentEval& eval) {
  const double p = dist[action];
  if (!(p > 0.0)) {
    throw StructuralError("zero-probability action in trajectory");
  }
  eval.logp += std::log(p);
  eval.grad += (feats.row(action).transpose() - feats.transpose() * dist) /
               temperature;
}

}  // namespace

TrajectoryEval evaluate_trajectory(const TaskInstance& task,
                                   const PolicySnapshot& policy,
                                   const trace::Trajectory& traj) {
  const auto values = parse_step_values(task, traj.steps);
  TrajectoryEval eval;
  eval.steps.resize(values.size());

  DerivationState s{0, task.start_value};
  for (std::size_t k = 0; k < values.size(); ++k) {
    const Eigen::MatrixXd feats = step_features(task, s);
    const Eigen::VectorXd dist = softmax(feats * policy.params / policy.temperature);
    accumulate_decision(feats, dist, values[k], policy.temperature, eval.steps[k]);
    s = {s.position + 1, values[k]};
  }

  if (traj.answered) {
    const auto space = action_space(task, s.position);
    if (space.can_emit) {
      // Electing to answer before the horizon is itself a decision.
      const Eigen::MatrixXd feats = step_features(task, s);
      const Eigen::VectorXd dist =
          softmax(feats * policy.params / policy.temperature);
      accumulate_decision(feats, dist, space.answer_index(), policy.temperature,
                          eval.answer_span);
    }
    if (static_cast<int>(traj.predicted_answer.size()) != task.answer_width) {
      throw StructuralError("predicted answer has wrong token count");
    }
    for (int l = 0; l < task.answer_width; ++l) {
      const int d = traj.predicted_answer[static_cast<std::size_t>(l)].id;
      if (d < 0 || d >= task.answer_base) {
        throw StructuralError("answer token outside the digit alphabet");
      }
      const Eigen::MatrixXd feats = answer_digit_features(task, s, l);
      const Eigen::VectorXd dist =
          softmax(feats * policy.params / policy.temperature);
      accumulate_decision(feats, dist, d, policy.temperature, eval.answer_span);
    }
  }
  return eval;
}

std::pair<double, Eigen::VectorXd> policy_logprob_and_grad(
    const TaskInstance& task, const PolicySnapshot& policy,
    const trace::Trajectory& traj) {
  const auto eval = evaluate_trajectory(task, policy, traj);
  return {eval.total_logp(), eval.total_grad()};
}

// ----------------------------------------------------------------------------
// Task suites
// ----------------------------------------------------------------------------

namespace {

struct FamilyParams {
  int modulus;
  int answer_base;
  int answer_width;
  int horizon;
  std::vector<OpKind> kinds;
  const char* name;
};

FamilyParams family_params(SuiteSize size) {
  switch (size) {
    case SuiteSize::kSmall:
      return {4, 4, 1, 4, {OpKind::kAdd}, "small"};
    case SuiteSize::kMedium:
      return {10, 10, 1, 6, {OpKind::kAdd, OpKind::kSub}, "medium"};
    case SuiteSize::kLarge:
      return {24, 24, 1, 8, {OpKind::kAdd, OpKind::kSub, OpKind::kMul}, "large"};
  }
  throw ConfigError("unknown suite size");
}

int uniform_int(std::mt19937_64& rng, int n) {
  const double u = seeding::canonical_uniform(rng);
  return std::min(static_cast<int>(u * n), n - 1);
}

std::vector<int> multiplicative_units(int modulus) {
  std::vector<int> units;
  for (int x = 2; x < modulus; ++x) {
    if (std::gcd(x, modulus) == 1) units.push_back(x);
  }
  return units;
}

}  // namespace

TaskInstance make_task(SuiteSize size, int difficulty, std::string question_id,
                       std::mt19937_64& rng) {
  const auto params = family_params(size);
  if (difficulty < 0 || difficulty > params.horizon) {
    throw ConfigError("difficulty must be in [0, horizon]");
  }

  TaskInstance task;
  task.question_id = std::move(question_id);
  task.vocab = Vocabulary{params.modulus, params.kinds};
  task.modulus = params.modulus;
  task.answer_base = params.answer_base;
  task.answer_width = params.answer_width;
  task.horizon = params.horizon;
  task.start_value = uniform_int(rng, params.modulus);

  // Partial Fisher-Yates to pick the distractor slots.
  std::vector<int> slots(static_cast<std::size_t>(params.horizon));
  std::iota(slots.begin(), slots.end(), 0);
  for (int i = 0; i < difficulty; ++i) {
    const int j = i + uniform_int(rng, params.horizon - i);
    std::swap(slots[static_cast<std::size_t>(i)], slots[static_cast<std::size_t>(j)]);
  }
  std::vector<bool> is_distractor(static_cast<std::size_t>(params.horizon), false);
  for (int i = 0; i < difficulty; ++i) {
    is_distractor[static_cast<std::size_t>(slots[static_cast<std::size_t>(i)])] = true;
  }

  const auto units = multiplicative_units(params.modulus);
  for (int p = 0; p < params.horizon; ++p) {
    Operation op;
    op.kind = params.kinds[static_cast<std::size_t>(
        uniform_int(rng, static_cast<int>(params.kinds.size())))];
    if (op.kind == OpKind::kMul) {
      op.operand = units[static_cast<std::size_t>(
          uniform_int(rng, static_cast<int>(units.size())))];
    } else {
      op.operand = 1 + uniform_int(rng, params.modulus - 1);
    }
    op.distractor = is_distractor[static_cast<std::size_t>(p)];
    task.ops.push_back(op);
  }
  task.finalize();
  return task;
}

TaskSuite make_suite(SuiteSize size, int difficulty, std::uint64_t seed,
                     int num_train, int num_eval) {
  const auto params = family_params(size);
  std::mt19937_64 rng(seeding::stream_seed(seed, seeding::kStreamSuite));
  TaskSuite suite;
  suite.name = params.name;
  suite.difficulty = difficulty;
  for (int i = 0; i < num_train; ++i) {
    std::ostringstream id;
    id << params.name << "-t" << i;
    suite.train_tasks.push_back(make_task(size, difficulty, id.str(), rng));
  }
  for (int i = 0; i < num_eval; ++i) {
    std::ostringstream id;
    id << params.name << "-e" << i;
    suite.eval_tasks.push_back(make_task(size, difficulty, id.str(), rng));
  }
  return suite;
}

TaskSuite builtin_suite(std::string_view name) {
  if (name == "small") return make_suite(SuiteSize::kSmall, 1, 11, 8, 8);
  if (name == "medium") return make_suite(SuiteSize::kMedium, 2, 22, 24, 24);
  if (name == "large") return make_suite(SuiteSize::kLarge, 2, 33, 24, 24);
  throw ConfigError("unknown builtin suite: " + std::string(name));
}

namespace {

std::string op_kind_name(OpKind kind) {
  switch (kind) {
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
  }
  throw ConfigError("unknown op kind");
}

OpKind op_kind_from_name(const std::string& name) {
  if (name == "add") return OpKind::kAdd;
  if (name == "sub") return OpKind::kSub;
  if (name == "mul") return OpKind::kMul;
  throw IoError("unknown op kind: " + name);
}

std::string answer_string(const TaskInstance& task) {
  std::string out;
  for (const auto& token : task.gt_answer) out += token.surface;
  return out;
}

json task_to_json(const TaskInstance& task) {
  json ops = json::array();
  for (const auto& op : task.ops) {
    ops.push_back({{"kind", op_kind_name(op.kind)},
                   {"operand", op.operand},
                   {"distractor", op.distractor}});
  }
  return {{"question_id", task.question_id},
          {"vocab_size", task.vocab.size()},
          {"modulus", task.modulus},
          {"answer_base", task.answer_base},
          {"answer_width", task.answer_width},
          {"horizon", task.horizon},
          {"start_value", task.start_value},
          {"ops", ops},
          {"answer", answer_string(task)}};
}

TaskInstance task_from_json(const json& j) {
  TaskInstance task;
  task.question_id = j.at("question_id").get<std::string>();
  task.modulus = j.at("modulus").get<int>();
  task.answer_base = j.at("answer_base").get<int>();
  task.answer_width = j.at("answer_width").get<int>();
  task.horizon = j.at("horizon").get<int>();
  task.start_value = j.at("start_value").get<int>();
  std::vector<OpKind> kinds;
  for (const auto& jop : j.at("ops")) {
    Operation op;
    op.kind = op_kind_from_name(jop.at("kind").get<std::string>());
    op.operand = jop.at("operand").get<int>();
    op.distractor = jop.at("distractor").get<bool>();
    task.ops.push_back(op);
    if (std::find(kinds.begin(), kinds.end(), op.kind) == kinds.end()) {
      kinds.push_back(op.kind);
    }
  }
  // The vocabulary kind list is ordered add < sub < mul regardless of which
  // kinds a particular task happens to use, so token ids are suite-stable.
  std::vector<OpKind> ordered;
  for (OpKind kind : {OpKind::kAdd, OpKind::kSub, OpKind::kMul}) {
    const int vocab_size = j.at("vocab_size").get<int>();
    const int needed_kinds = (vocab_size - task.modulus - 2) / 2;
    if (static_cast<int>(ordered.size()) < needed_kinds) ordered.push_back(kind);
  }
  task.vocab = Vocabulary{task.modulus, ordered};
  if (task.vocab.size() != j.at("vocab_size").get<int>()) {
    throw IoError("vocab_size inconsistent with modulus and op kinds");
  }
  task.finalize();
  if (answer_string(task) != j.at("answer").get<std::string>()) {
    throw IoError("stored answer does not match the recomputed derivation for " +
                  task.question_id);
  }
  return task;
}

}  // namespace

std::string suite_to_json(const TaskSuite& suite, bool pretty) {
  json tasks = json::array();
  for (const auto& task : suite.train_tasks) tasks.push_back(task_to_json(task));
  json eval_tasks = json::array();
  for (const auto& task : suite.eval_tasks) eval_tasks.push_back(task_to_json(task));
  const json doc = {{"version", suite.version},
                    {"family", "chain_arithmetic"},
                    {"name", suite.name},
                    {"difficulty", suite.difficulty},
                    {"tasks", tasks},
                    {"eval_tasks", eval_tasks}};
  return pretty ? doc.dump(2) : doc.dump();
}

void save_suite(const TaskSuite& suite, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write suite file: " + path.string());
  out << suite_to_json(suite) << "\n";
}

TaskSuite load_suite(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read suite file: " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw IoError("suite file is not valid JSON: " + std::string(e.what()));
  }
  try {
    if (doc.at("version").get<int>() != 1) {
      throw IoError("unsupported suite version");
    }
    if (doc.at("family").get<std::string>() != "chain_arithmetic") {
      throw IoError("unsupported task family");
    }
    TaskSuite suite;
    suite.name = doc.at("name").get<std::string>();
    suite.difficulty = doc.at("difficulty").get<int>();
    for (const auto& j : doc.at("tasks")) suite.train_tasks.push_back(task_from_json(j));
    for (const auto& j : doc.at("eval_tasks")) {
      suite.eval_tasks.push_back(task_from_json(j));
    }
    return suite;
  } catch (const json::exception& e) {
    throw IoError("suite schema violation: " + std::string(e.what()));
  }
}

std::uint64_t suite_hash(const TaskSuite& suite) {
  const std::string canonical = suite_to_json(suite, /*pretty=*/false);
  std::uint64_t hash = 14695981039346656037ULL;
  for (unsigned char c : canonical) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

// ----------------------------------------------------------------------------
// Proposition check
// ----------------------------------------------------------------------------

PropositionCheck verify_proposition(std::span<const TaskInstance> tasks,
                                    int draws, std::uint64_t seed,
                                    bool break_bayes) {
  PropositionCheck check;
  std::mt19937_64 rng(seeding::stream_seed(seed, seeding::kStreamPropositionDraws));

  for (int draw = 0; draw < draws; ++draw) {
    PolicySnapshot policy;
    for (int i = 0; i < kNumFeatures; ++i) {
      policy.params[i] = -2.0 + 4.0 * seeding::canonical_uniform(rng);
    }
    for (const auto& task : tasks) {
      const ConfidenceOracle oracle(task, policy);
      for (int p = 0; p <= task.horizon; ++p) {
        const int value_lo = p == 0 ? task.start_value : 0;
        const int value_hi = p == 0 ? task.start_value + 1 : task.modulus;
        for (int v = value_lo; v < value_hi; ++v) {
          const DerivationState s{p, v};
          const auto space = action_space(task, p);
          const Eigen::VectorXd base = step_distribution(task, policy, s);
          const Eigen::VectorXd cond =
              oracle_step_distribution_at(task, policy, s, oracle, break_bayes);

          const double conf_before = oracle.gt_answer_logprob(s);
          double expected_gain = 0.0;
          double kl = 0.0;
          for (int a = 0; a < space.num_actions(); ++a) {
            double conf_after;
            if (space.is_answer(a)) {
              const Eigen::VectorXd imm =
                  immediate_answer_distribution(task, policy, s);
              conf_after = std::log(imm[task.gt_answer_value] / imm.sum());
            } else {
              conf_after = oracle.gt_answer_logprob({p + 1, a});
            }
            expected_gain += cond[a] * (conf_after - conf_before);
            kl += cond[a] * std::log(cond[a] / base[a]);
          }

          ++check.cases;
          const double gap = std::abs(expected_gain - kl);
          if (gap > check.max_abs_gap) {
            check.max_abs_gap = gap;
            std::ostringstream desc;
            desc << "task=" << task.question_id << " draw=" << draw
                 << " position=" << p << " value=" << v;
            check.worst_gap_case = desc.str();
          }
          if (expected_gain < check.min_expected_gain) {
            check.min_expected_gain = expected_gain;
            std::ostringstream desc;
            desc << "task=" << task.question_id << " draw=" << draw
                 << " position=" << p << " value=" << v;
            check.worst_gain_case = desc.str();
          }
        }
      }
    }
  }
  return check;
}

}  // namespace pacr::env
