#include "pacr/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pacr/errors.hpp"
#include "pacr/stats.hpp"

namespace pacr::analysis {

using json = nlohmann::ordered_json;

std::vector<double> TrajectoryLogRecord::gains() const {
  std::vector<double> out;
  double prev = 0.0;
  bool have_prev = false;
  if (logp_empty.has_value()) {
    prev = *logp_empty;
    have_prev = true;
  }
  for (const auto& step : steps) {
    if (have_prev) out.push_back(step.logp_gt - prev);
    prev = step.logp_gt;
    have_prev = true;
  }
  return out;
}

std::optional<double> TrajectoryLogRecord::consistency() const {
  const auto gs = gains();
  if (gs.empty()) return std::nullopt;
  int positive = 0;
  for (double g : gs) {
    if (g > 0.0) ++positive;
  }
  return static_cast<double>(positive) / static_cast<double>(gs.size());
}

// ----------------------------------------------------------------------------
// Ingest / emit
// ----------------------------------------------------------------------------

namespace {

Coherence coherence_from_json(const json& j) {
  if (j.is_null()) return Coherence::kUnlabeled;
  const auto s = j.get<std::string>();
  if (s == "coherent") return Coherence::kCoherent;
  if (s == "spurious") return Coherence::kSpurious;
  throw IoError("coherence must be null, \"coherent\" or \"spurious\"");
}

json coherence_to_json(Coherence c) {
  switch (c) {
    case Coherence::kUnlabeled: return nullptr;
    case Coherence::kCoherent: return "coherent";
    case Coherence::kSpurious: return "spurious";
  }
  throw StateError("unknown coherence label");
}

TrajectoryLogRecord record_from_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError(std::string("invalid JSON: ") + e.what());
  }
  try {
    if (j.at("v").get<int>() != 1) throw IoError("unsupported record version");
    TrajectoryLogRecord record;
    record.question_id = j.at("question_id").get<std::string>();
    record.correct = j.at("correct").get<bool>();
    record.coherence = coherence_from_json(j.at("coherence"));
    const auto& steps = j.at("steps");
    if (!steps.is_array() || steps.empty()) {
      throw IoError("steps must be a non-empty array");
    }
    for (const auto& js : steps) {
      LogStep step;
      step.text = js.at("text").get<std::string>();
      step.logp_gt = js.at("logp_gt").get<double>();
      if (!std::isfinite(step.logp_gt) || step.logp_gt > 0.0) {
        throw IoError("logp_gt must be finite and <= 0");
      }
      record.steps.push_back(std::move(step));
    }
    if (j.contains("logp_empty") && !j.at("logp_empty").is_null()) {
      const double lp = j.at("logp_empty").get<double>();
      if (!std::isfinite(lp) || lp > 0.0) {
        throw IoError("logp_empty must be finite and <= 0");
      }
      record.logp_empty = lp;
    }
    return record;
  } catch (const json::exception& e) {
    throw IoError(std::string("schema violation: ") + e.what());
  }
}

json record_to_json(const TrajectoryLogRecord& record) {
  json steps = json::array();
  for (const auto& step : record.steps) {
    steps.push_back({{"text", step.text}, {"logp_gt", step.logp_gt}});
  }
  json j = {{"v", 1},
            {"question_id", record.question_id},
            {"correct", record.correct},
            {"coherence", coherence_to_json(record.coherence)},
            {"steps", steps}};
  if (record.logp_empty.has_value()) j["logp_empty"] = *record.logp_empty;
  return j;
}

}  // namespace

IngestResult ingest(const std::filesystem::path& path, IngestOptions options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read log file: " + path.string());
  IngestResult result;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    try {
      result.records.push_back(record_from_line(line));
    } catch (const IoError& e) {
      std::ostringstream msg;
      msg << path.string() << ":" << line_number << ": " << e.what();
      if (!options.lenient) throw IoError(msg.str());
      result.warnings.push_back(msg.str());
    }
  }
  if (result.records.empty()) {
    throw IoError("log file contains no valid records: " + path.string());
  }
  return result;
}

void emit(std::span<const TrajectoryLogRecord> records,
          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write log file: " + path.string());
  for (const auto& record : records) {
    out << record_to_json(record).dump() << "\n";
  }
}

// ----------------------------------------------------------------------------
// Comparisons
// ----------------------------------------------------------------------------

namespace {

ComparisonReport compare_consistencies(const std::vector<double>& lhs,
                                       const std::vector<double>& rhs,
                                       int excluded, std::uint64_t seed,
                                       int resamples, const std::string& empty_note) {
  ComparisonReport report;
  report.excluded_records = excluded;
  if (lhs.empty() || rhs.empty()) {
    report.note = empty_note;
    return report;
  }
  report.defined = true;
  report.lhs = {static_cast<int>(lhs.size()), stats::mean(lhs)};
  report.rhs = {static_cast<int>(rhs.size()), stats::mean(rhs)};
  report.difference = report.lhs.mean_consistency - report.rhs.mean_consistency;
  const auto ci = stats::bootstrap_diff_ci(lhs, rhs, resamples, seed);
  report.ci_lo = ci.lo;
  report.ci_hi = ci.hi;
  return report;
}

}  // namespace

ComparisonReport consistency_comparison(
    std::span<const TrajectoryLogRecord> records, std::uint64_t bootstrap_seed,
    int resamples) {
  std::vector<double> correct;
  std::vector<double> incorrect;
  int excluded = 0;
  for (const auto& record : records) {
    const auto c = record.consistency();
    if (!c.has_value()) {
      ++excluded;
      continue;
    }
    (record.correct ? correct : incorrect).push_back(*c);
  }
  return compare_consistencies(correct, incorrect, excluded, bootstrap_seed,
                               resamples,
                               "undefined: needs both correct and incorrect "
                               "trajectories with computable gains");
}

ComparisonReport coherence_comparison(
    std::span<const TrajectoryLogRecord> records, std::uint64_t bootstrap_seed,
    int resamples) {
  std::vector<double> coherent;
  std::vector<double> spurious;
  int excluded = 0;
  for (const auto& record : records) {
    if (!record.correct || record.coherence == Coherence::kUnlabeled) continue;
    const auto c = record.consistency();
    if (!c.has_value()) {
      ++excluded;
      continue;
    }
    (record.coherence == Coherence::kCoherent ? coherent : spurious).push_back(*c);
  }
  if (coherent.size() < 2 || spurious.size() < 2) {
    ComparisonReport report;
    report.excluded_records = excluded;
    report.note =
        "undefined: needs >= 2 correct records labeled coherent and >= 2 "
        "labeled spurious";
    return report;
  }
  return compare_consistencies(coherent, spurious, excluded, bootstrap_seed,
                               resamples, "");
}

std::vector<std::pair<int, double>> pivotal_steps(
    const TrajectoryLogRecord& record, int top_n) {
  const auto gains = record.gains();
  std::vector<std::pair<int, double>> ranked;
  ranked.reserve(gains.size());
  for (std::size_t t = 0; t < gains.size(); ++t) {
    ranked.emplace_back(static_cast<int>(t) + record.first_gain_step(), gains[t]);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     if (a.second != b.second) return a.second > b.second;
                     return a.first < b.first;
                   });
  if (top_n >= 0 && ranked.size() > static_cast<std::size_t>(top_n)) {
    ranked.resize(static_cast<std::size_t>(top_n));
  }
  return ranked;
}

WinRateReport pairwise_gain_winrate(std::span<const TrajectoryLogRecord> records,
                                    const std::filesystem::path& judgments_path) {
  std::map<std::string, const TrajectoryLogRecord*> by_id;
  for (const auto& record : records) by_id.emplace(record.question_id, &record);

  std::ifstream in(judgments_path);
  if (!in) {
    throw IoError("cannot read judgments file: " + judgments_path.string());
  }

  WinRateReport report;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    auto reject = [&](const std::string& why) {
      ++report.rejected_pairs;
      std::ostringstream msg;
      msg << judgments_path.string() << ":" << line_number << ": " << why;
      report.warnings.push_back(msg.str());
    };
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      reject(std::string("invalid JSON: ") + e.what());
      continue;
    }
    try {
      PairJudgment judgment;
      judgment.question_id = j.at("question_id").get<std::string>();
      judgment.i = j.at("i").get<int>();
      judgment.j = j.at("j").get<int>();
      const auto winner = j.at("winner").get<std::string>();
      if (winner != "i" && winner != "j") {
        reject("winner must be \"i\" or \"j\"");
        continue;
      }
      judgment.winner_is_i = winner == "i";

      const auto it = by_id.find(judgment.question_id);
      if (it == by_id.end()) {
        reject("unknown question_id " + judgment.question_id);
        continue;
      }
      const auto& record = *it->second;
      const auto gains = record.gains();
      const int first = record.first_gain_step();
      const int last = first + static_cast<int>(gains.size()) - 1;
      if (judgment.i < first || judgment.i > last || judgment.j < first ||
          judgment.j > last) {
        reject("step index outside the record's gain range");
        continue;
      }
      const double gain_i = gains[static_cast<std::size_t>(judgment.i - first)];
      const double gain_j = gains[static_cast<std::size_t>(judgment.j - first)];
      if (!(gain_i > gain_j)) {
        reject("pair violates C_i > C_j");
        continue;
      }
      ++report.pairs;
      if (judgment.winner_is_i) ++report.wins;
    } catch (const json::exception& e) {
      reject(std::string("schema violation: ") + e.what());
    }
  }

  if (report.pairs == 0) {
    report.note = "undefined: no valid judged pairs";
    return report;
  }
  report.defined = true;
  report.win_rate =
      static_cast<double>(report.wins) / static_cast<double>(report.pairs);
  const auto ci = stats::wilson_interval(report.wins, report.pairs);
  report.ci_lo = ci.lo;
  report.ci_hi = ci.hi;
  report.excludes_chance = !ci.contains(0.5);
  return report;
}

}  // namespace pacr::analysis
