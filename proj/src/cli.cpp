#include "pacr/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pacr/analysis.hpp"
#include "pacr/env.hpp"
#include "pacr/errors.hpp"
#include "pacr/version.hpp"

namespace pacr::cli {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ----------------------------------------------------------------------------
// Config file
// ----------------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) {
    s.remove_prefix(1);
  }
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) {
    s.remove_suffix(1);
  }
  return std::string(s);
}

double parse_double_field(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double parsed = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing junk");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected a number, got '" +
                      value + "'");
  }
}

long parse_int_field(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long parsed = std::stol(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing junk");
    return parsed;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" +
                      value + "'");
  }
}

}  // namespace

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped.front() == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_number) +
                        ": expected key = value");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));

    auto& train = config.train;
    if (key == "variant") {
      train.shaping.variant = reward::parse_variant(value);
    } else if (key == "lambda1") {
      train.shaping.lambda1 = parse_double_field(key, value);
    } else if (key == "lambda2") {
      train.shaping.lambda2 = parse_double_field(key, value);
    } else if (key == "gamma") {
      train.shaping.gamma = parse_double_field(key, value);
    } else if (key == "group_size") {
      train.shaping.group_size = static_cast<int>(parse_int_field(key, value));
    } else if (key == "clip_eps") {
      train.shaping.clip_eps = parse_double_field(key, value);
    } else if (key == "kl_beta") {
      train.shaping.kl_beta = parse_double_field(key, value);
    } else if (key == "learning_rate") {
      train.learning_rate = parse_double_field(key, value);
    } else if (key == "batch_size") {
      train.batch_size = static_cast<int>(parse_int_field(key, value));
    } else if (key == "total_updates") {
      train.total_updates = static_cast<int>(parse_int_field(key, value));
    } else if (key == "eval_cadence") {
      train.eval_cadence = static_cast<int>(parse_int_field(key, value));
    } else if (key == "seed") {
      train.seed = static_cast<std::uint64_t>(parse_int_field(key, value));
    } else if (key == "init_noise") {
      train.init_noise = parse_double_field(key, value);
    } else if (key == "temperature") {
      train.temperature = parse_double_field(key, value);
    } else if (key == "answer_prefix") {
      train.answer_prefix = value;
    } else if (key == "suite") {
      config.suite = value;
    } else if (key == "out_dir") {
      config.out_dir = value;
    } else if (key == "emit_log") {
      config.emit_log = value;
    } else {
      throw ConfigError("unknown config key '" + key + "' on line " +
                        std::to_string(line_number));
    }
  }
  return config;
}

RunConfig RunConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return from_string(text.str());
}

std::map<std::string, std::string> RunConfig::snapshot() const {
  std::ostringstream lambda1, lambda2, gamma, clip_eps, kl_beta, lr, noise, temp;
  lambda1 << train.shaping.lambda1;
  lambda2 << train.shaping.lambda2;
  gamma << train.shaping.gamma;
  clip_eps << train.shaping.clip_eps;
  kl_beta << train.shaping.kl_beta;
  lr << train.learning_rate;
  noise << train.init_noise;
  temp << train.temperature;
  return {
      {"variant", std::string(reward::variant_name(train.shaping.variant))},
      {"lambda1", lambda1.str()},
      {"lambda2", lambda2.str()},
      {"gamma", gamma.str()},
      {"group_size", std::to_string(train.shaping.group_size)},
      {"clip_eps", clip_eps.str()},
      {"kl_beta", kl_beta.str()},
      {"learning_rate", lr.str()},
      {"batch_size", std::to_string(train.batch_size)},
      {"total_updates", std::to_string(train.total_updates)},
      {"eval_cadence", std::to_string(train.eval_cadence)},
      {"seed", std::to_string(train.seed)},
      {"init_noise", noise.str()},
      {"temperature", temp.str()},
      {"answer_prefix", train.answer_prefix},
      {"suite", suite},
      {"out_dir", out_dir},
      {"emit_log", emit_log},
  };
}

// ----------------------------------------------------------------------------
// Helpers
// ----------------------------------------------------------------------------

namespace {

std::string now_iso8601() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string hex_hash(std::uint64_t hash) {
  std::ostringstream out;
  out << "0x" << std::hex << hash;
  return out.str();
}

env::TaskSuite resolve_suite(const std::string& name_or_path) {
  if (name_or_path == "small" || name_or_path == "medium" ||
      name_or_path == "large") {
    return env::builtin_suite(name_or_path);
  }
  return env::load_suite(name_or_path);
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
}

json comparison_to_json(const analysis::ComparisonReport& report,
                        const char* lhs_name, const char* rhs_name) {
  if (!report.defined) {
    return {{"defined", false}, {"note", report.note}};
  }
  return {{"defined", true},
          {lhs_name,
           {{"count", report.lhs.count},
            {"mean_consistency", report.lhs.mean_consistency}}},
          {rhs_name,
           {{"count", report.rhs.count},
            {"mean_consistency", report.rhs.mean_consistency}}},
          {"difference", report.difference},
          {"ci95", {report.ci_lo, report.ci_hi}},
          {"excluded_records", report.excluded_records}};
}

std::string escape_newlines(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (char c : text) {
    if (c == '\n') {
      out += "\\n";
    } else {
      out.push_back(c);
    }
  }
  return out;
}

std::optional<std::uint64_t> env_seed_override() {
  if (const char* value = std::getenv("PACR_SEED")) {
    return static_cast<std::uint64_t>(std::stoull(value));
  }
  return std::nullopt;
}

std::optional<std::string> env_out_override() {
  if (const char* value = std::getenv("PACR_OUT")) return std::string(value);
  return std::nullopt;
}

// ----------------------------------------------------------------------------
// train
// ----------------------------------------------------------------------------

int cmd_train(const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& variant, const std::string& out_flag,
              const std::string& emit_log_flag, std::ostream& out) {
  RunConfig config = RunConfig::from_file(config_path);
  if (!variant.empty()) config.train.shaping.variant = reward::parse_variant(variant);
  if (seed.has_value()) {
    config.train.seed = *seed;
  } else if (const auto env_seed = env_seed_override()) {
    config.train.seed = *env_seed;
  }
  if (!out_flag.empty()) {
    config.out_dir = out_flag;
  } else if (const auto env_out = env_out_override()) {
    config.out_dir = *env_out;
  }
  if (!emit_log_flag.empty()) config.emit_log = emit_log_flag;
  config.train.record_rollouts = !config.emit_log.empty();
  config.train.validate();

  const std::string started_at = now_iso8601();
  const env::TaskSuite suite = resolve_suite(config.suite);
  const auto result = opt::train(suite, config.train);

  const fs::path out_dir(config.out_dir);
  fs::create_directories(out_dir);
  std::vector<std::string> outputs;

  const fs::path metrics_path = out_dir / "metrics.csv";
  write_text_file(metrics_path, opt::metrics_csv(result.metrics));
  outputs.push_back("metrics.csv");

  if (!config.emit_log.empty()) {
    const fs::path log_path = out_dir / config.emit_log;
    analysis::emit(result.rollout_records, log_path);
    outputs.push_back(config.emit_log);
  }

  outputs.push_back("manifest.json");
  json manifest = {{"tool", kToolName},
                   {"version", kToolVersion},
                   {"command", "train"},
                   {"seed", config.train.seed},
                   {"suite_hash", hex_hash(env::suite_hash(suite))},
                   {"config", config.snapshot()},
                   {"started_at", started_at},
                   {"finished_at", now_iso8601()},
                   {"outputs", outputs}};
  write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

  const auto& last = result.metrics.back();
  out << "trained " << reward::variant_name(config.train.shaping.variant)
      << " for " << config.train.total_updates << " updates (seed "
      << config.train.seed << ")\n"
      << "final mean terminal reward " << last.mean_terminal_reward
      << ", held-out accuracy " << last.heldout_accuracy << "\n"
      << "wrote " << metrics_path.string() << "\n";
  return 0;
}

// ----------------------------------------------------------------------------
// analyze
// ----------------------------------------------------------------------------

int cmd_analyze(const std::string& log_path, const std::string& judgments_path,
                const std::string& out_flag, bool lenient, std::uint64_t seed,
                int top_n, std::ostream& out) {
  std::string out_dir_name = out_flag;
  if (out_dir_name.empty()) {
    out_dir_name = env_out_override().value_or("pacr-analysis");
  }

  const auto ingest = analysis::ingest(log_path, {.lenient = lenient});
  const auto records = std::span<const analysis::TrajectoryLogRecord>(
      ingest.records.data(), ingest.records.size());

  const auto obs1 = analysis::consistency_comparison(records, seed);
  const auto obs2 = analysis::coherence_comparison(records, seed);

  json report = {{"tool", kToolName},
                 {"version", kToolVersion},
                 {"log", log_path},
                 {"records", ingest.records.size()},
                 {"skipped_lines", ingest.warnings.size()},
                 {"bootstrap_seed", seed},
                 {"observation1_correct_vs_incorrect",
                  comparison_to_json(obs1, "correct", "incorrect")},
                 {"observation2_coherent_vs_spurious",
                  comparison_to_json(obs2, "coherent", "spurious")}};

  if (!judgments_path.empty()) {
    const auto winrate = analysis::pairwise_gain_winrate(records, judgments_path);
    json jw;
    if (winrate.defined) {
      jw = {{"defined", true},
            {"pairs", winrate.pairs},
            {"wins", winrate.wins},
            {"win_rate", winrate.win_rate},
            {"ci95", {winrate.ci_lo, winrate.ci_hi}},
            {"excludes_chance", winrate.excludes_chance},
            {"rejected_pairs", winrate.rejected_pairs}};
    } else {
      jw = {{"defined", false},
            {"note", winrate.note},
            {"rejected_pairs", winrate.rejected_pairs}};
    }
    report["observation3_pairwise_winrate"] = jw;
  }

  const fs::path out_dir(out_dir_name);
  fs::create_directories(out_dir);

  std::ostringstream consistency_csv;
  consistency_csv << "question_id,correct,coherence,consistency\n";
  consistency_csv.precision(12);
  for (const auto& record : ingest.records) {
    consistency_csv << record.question_id << ','
                    << (record.correct ? 1 : 0) << ',';
    switch (record.coherence) {
      case analysis::Coherence::kUnlabeled: consistency_csv << "unlabeled"; break;
      case analysis::Coherence::kCoherent: consistency_csv << "coherent"; break;
      case analysis::Coherence::kSpurious: consistency_csv << "spurious"; break;
    }
    consistency_csv << ',';
    if (const auto c = record.consistency()) consistency_csv << *c;
    consistency_csv << '\n';
  }
  write_text_file(out_dir / "consistency.csv", consistency_csv.str());

  std::ostringstream pivotal_csv;
  pivotal_csv << "question_id,rank,step_index,gain\n";
  pivotal_csv.precision(12);
  for (const auto& record : ingest.records) {
    const auto ranked = analysis::pivotal_steps(record, top_n);
    for (std::size_t rank = 0; rank < ranked.size(); ++rank) {
      pivotal_csv << record.question_id << ',' << rank + 1 << ','
                  << ranked[rank].first << ',' << ranked[rank].second << '\n';
    }
  }
  write_text_file(out_dir / "pivotal_steps.csv", pivotal_csv.str());

  write_text_file(out_dir / "report.json", report.dump(2) + "\n");

  for (const auto& warning : ingest.warnings) out << "skipped " << warning << "\n";
  out << "analyzed " << ingest.records.size() << " records\n";
  if (obs1.defined) {
    out << "observation 1: mean consistency correct=" << obs1.lhs.mean_consistency
        << " incorrect=" << obs1.rhs.mean_consistency << " diff="
        << obs1.difference << " ci95=[" << obs1.ci_lo << ", " << obs1.ci_hi
        << "]\n";
  } else {
    out << "observation 1: " << obs1.note << "\n";
  }
  if (obs2.defined) {
    out << "observation 2: mean consistency coherent=" << obs2.lhs.mean_consistency
        << " spurious=" << obs2.rhs.mean_consistency << " diff="
        << obs2.difference << " ci95=[" << obs2.ci_lo << ", " << obs2.ci_hi
        << "]\n";
  } else {
    out << "observation 2: " << obs2.note << "\n";
  }
  out << "wrote " << (out_dir / "report.json").string() << "\n";
  return 0;
}

// ----------------------------------------------------------------------------
// verify-proposition
// ----------------------------------------------------------------------------

int cmd_verify_proposition(int trials, std::uint64_t seed,
                           const std::string& suite_arg, bool break_bayes,
                           std::ostream& out) {
  std::vector<env::TaskInstance> tasks;
  std::vector<std::string> suite_names;
  if (suite_arg == "all") {
    suite_names = {"small", "medium", "large"};
  } else {
    suite_names = {suite_arg};
  }
  for (const auto& name : suite_names) {
    const auto suite = resolve_suite(name);
    tasks.insert(tasks.end(), suite.train_tasks.begin(), suite.train_tasks.end());
    tasks.insert(tasks.end(), suite.eval_tasks.begin(), suite.eval_tasks.end());
  }

  const auto check = env::verify_proposition(tasks, trials, seed, break_bayes);
  const bool pass = check.pass();
  out << "proposition check over " << tasks.size() << " tasks x " << trials
      << " policy draws: " << check.cases << " prefix cases\n";
  out.precision(6);
  out << std::scientific;
  out << "max |E[C_k] - KL(oracle||base)| = " << check.max_abs_gap
      << " (tolerance 1e-09) at " << check.worst_gap_case << "\n";
  out << "min E[C_k] = " << check.min_expected_gain
      << " (tolerance -1e-12) at " << check.worst_gain_case << "\n";
  out << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? 0 : 1;
}

// ----------------------------------------------------------------------------
// segment
// ----------------------------------------------------------------------------

int cmd_segment(const std::string& text_path, std::ostream& out) {
  std::ifstream in(text_path);
  if (!in) throw IoError("cannot read text file: " + text_path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  if (text.empty()) {
    out << "0 steps\n";
    return 0;
  }
  const auto tokenize = trace::make_whitespace_tokenizer();
  const auto steps = trace::segment(text, tokenize);
  out << steps.size() << " steps\n";
  for (std::size_t i = 0; i < steps.size(); ++i) {
    out << i + 1 << ": [" << steps[i].tokens.size() << " tokens] "
        << escape_newlines(steps[i].raw_text) << "\n";
  }
  return 0;
}

// ----------------------------------------------------------------------------
// gen-suite
// ----------------------------------------------------------------------------

int cmd_gen_suite(const std::string& size_name, int difficulty,
                  std::uint64_t seed, int num_train, int num_eval,
                  const std::string& out_path, std::ostream& out) {
  env::SuiteSize size;
  if (size_name == "small") {
    size = env::SuiteSize::kSmall;
  } else if (size_name == "medium") {
    size = env::SuiteSize::kMedium;
  } else if (size_name == "large") {
    size = env::SuiteSize::kLarge;
  } else {
    throw ConfigError("suite size must be small, medium, or large");
  }
  const auto suite = env::make_suite(size, difficulty, seed, num_train, num_eval);
  env::save_suite(suite, out_path);
  out << "wrote " << out_path << " (" << suite.train_tasks.size()
      << " train tasks, " << suite.eval_tasks.size() << " eval tasks, hash "
      << hex_hash(env::suite_hash(suite)) << ")\n";
  return 0;
}

}  // namespace

// ----------------------------------------------------------------------------
// Entry point
// ----------------------------------------------------------------------------

int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err) {
  CLI::App app{"PACR: confidence-shaped group-relative policy optimization on "
               "exact synthetic reasoning tasks"};
  app.set_version_flag("--version", std::string(kToolName) + " " + kToolVersion);
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "run a training experiment");
  std::string config_path;
  train->add_option("--config", config_path, "key = value config file")->required();
  std::uint64_t seed_flag = 0;
  auto* train_seed = train->add_option("--seed", seed_flag, "master seed override");
  std::string variant_flag;
  train->add_option("--variant", variant_flag,
                    "baseline | sparse | dense-minmax | dense-loo");
  std::string out_flag;
  train->add_option("--out", out_flag, "output directory");
  std::string emit_log_flag;
  train->add_option("--emit-log", emit_log_flag,
                    "also write training rollouts as JSONL (relative to --out)");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "observational statistics over a log");
  std::string log_path;
  analyze->add_option("log", log_path, "trajectory log (JSONL)")->required();
  std::string judgments_path;
  analyze->add_option("--judgments", judgments_path, "pairwise judgments (JSONL)");
  std::string analyze_out;
  analyze->add_option("--out", analyze_out, "output directory");
  bool lenient = false;
  analyze->add_flag("--lenient", lenient, "skip malformed lines instead of failing");
  std::uint64_t analyze_seed = 0;
  auto* analyze_seed_opt =
      analyze->add_option("--seed", analyze_seed, "bootstrap seed");
  int top_n = 3;
  analyze->add_option("--top-n", top_n, "pivotal steps per record");

  // verify-proposition
  auto* verify = app.add_subcommand(
      "verify-proposition",
      "check E[C_k] = KL(oracle||base) >= 0 over the shipped suites");
  int trials = 200;
  verify->add_option("--trials", trials, "random policy draws");
  std::uint64_t verify_seed = 7;
  verify->add_option("--seed", verify_seed, "seed for the policy draws");
  std::string verify_suite = "all";
  verify->add_option("--suite", verify_suite,
                     "small | medium | large | all | path to a suite JSON");
  bool break_bayes = false;
  verify->add_flag("--break-bayes", break_bayes,
                   "fault-injection hook: corrupt the Bayes inversion");

  // segment
  auto* segment = app.add_subcommand("segment", "split a text file into steps");
  std::string text_path;
  segment->add_option("file", text_path, "text file")->required();

  // gen-suite
  auto* gen = app.add_subcommand("gen-suite", "generate a task suite JSON");
  std::string gen_size = "medium";
  gen->add_option("--size", gen_size, "small | medium | large");
  int gen_difficulty = 2;
  gen->add_option("--difficulty", gen_difficulty, "distractor operations per task");
  std::uint64_t gen_seed = 22;
  gen->add_option("--seed", gen_seed, "generation seed");
  int gen_train = 24;
  gen->add_option("--train-tasks", gen_train, "number of training tasks");
  int gen_eval = 24;
  gen->add_option("--eval-tasks", gen_eval, "number of eval tasks");
  std::string gen_out = "suite.json";
  gen->add_option("--out", gen_out, "output file");

  std::vector<const char*> argv;
  argv.reserve(args.size() + 1);
  argv.push_back(kToolName);
  for (const auto& arg : args) argv.push_back(arg.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion& e) {
    out << app.version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (train->parsed()) {
      std::optional<std::uint64_t> seed;
      if (train_seed->count() > 0) seed = seed_flag;
      return cmd_train(config_path, seed, variant_flag, out_flag, emit_log_flag,
                       out);
    }
    if (analyze->parsed()) {
      std::uint64_t seed = analyze_seed;
      if (analyze_seed_opt->count() == 0) {
        seed = env_seed_override().value_or(analyze_seed);
      }
      return cmd_analyze(log_path, judgments_path, analyze_out, lenient, seed,
                         top_n, out);
    }
    if (verify->parsed()) {
      return cmd_verify_proposition(trials, verify_seed, verify_suite,
                                    break_bayes, out);
    }
    if (segment->parsed()) return cmd_segment(text_path, out);
    if (gen->parsed()) {
      return cmd_gen_suite(gen_size, gen_difficulty, gen_seed, gen_train,
                           gen_eval, gen_out, out);
    }
    err << "error: no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace pacr::cli
