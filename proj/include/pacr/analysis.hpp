#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace pacr::analysis {

enum class Coherence { kUnlabeled, kCoherent, kSpurious };

struct LogStep {
  std::string text;
  double logp_gt = 0.0;  // log p(Y_gt | q, H_<=k), nats, <= 0
};

/// One trajectory from a JSONL log. Gains are recomputed from logp_gt
/// differences; supplied gain fields are never trusted. logp_empty
/// (optional "logp_empty" key, emitted by the simulator) is the empty-prefix
/// confidence; without it the first step has no gain.
struct TrajectoryLogRecord {
  std::string question_id;
  bool correct = false;
  Coherence coherence = Coherence::kUnlabeled;
  std::vector<LogStep> steps;
  std::optional<double> logp_empty;

  /// Successive logp differences. gains()[t] belongs to the step with
  /// 1-based index t + first_gain_step().
  std::vector<double> gains() const;
  int first_gain_step() const { return logp_empty.has_value() ? 1 : 2; }
  /// Proportion of strictly positive gains; nullopt when no gain exists.
  std::optional<double> consistency() const;
};

struct IngestOptions {
  bool lenient = false;  // skip malformed lines instead of failing
};

struct IngestResult {
  std::vector<TrajectoryLogRecord> records;
  std::vector<std::string> warnings;  // one per skipped line, with line number
};

/// Reads a v1 JSONL trajectory log. Malformed lines are fatal (IoError with
/// the line number) unless options.lenient, in which case they are skipped
/// and reported. An empty file is an error.
IngestResult ingest(const std::filesystem::path& path, IngestOptions options = {});

/// Writes records as v1 JSONL; ingest(emit(records)) round-trips losslessly.
void emit(std::span<const TrajectoryLogRecord> records,
          const std::filesystem::path& path);

struct GroupStats {
  int count = 0;
  double mean_consistency = 0.0;
};

/// Two-group comparison of mean consistency with a seeded percentile
/// bootstrap CI on the difference. Undefined (with a note) when either
/// group is empty.
struct ComparisonReport {
  bool defined = false;
  std::string note;
  GroupStats lhs;
  GroupStats rhs;
  double difference = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int excluded_records = 0;  // records with no computable gain
};

inline constexpr int kDefaultBootstrapResamples = 10000;

/// Observation-1 statistic: correct vs incorrect trajectories.
ComparisonReport consistency_comparison(
    std::span<const TrajectoryLogRecord> records, std::uint64_t bootstrap_seed,
    int resamples = kDefaultBootstrapResamples);

/// Observation-2 statistic: coherent vs spurious among correct trajectories.
/// Undefined unless both labels appear on at least 2 correct records.
ComparisonReport coherence_comparison(
    std::span<const TrajectoryLogRecord> records, std::uint64_t bootstrap_seed,
    int resamples = kDefaultBootstrapResamples);

/// Steps ranked by descending confidence gain (ties break toward the earlier
/// step). Returns at most top_n (1-based step index, gain) pairs.
std::vector<std::pair<int, double>> pivotal_steps(
    const TrajectoryLogRecord& record, int top_n);

struct PairJudgment {
  std::string question_id;
  int i = 0;  // 1-based step indices; C_i > C_j holds after loading
  int j = 0;
  bool winner_is_i = false;
};

struct WinRateReport {
  bool defined = false;
  std::string note;
  int pairs = 0;
  int wins = 0;  // judgments favoring the higher-gain step
  double win_rate = 0.0;
  double ci_lo = 0.0;  // Wilson 95% interval
  double ci_hi = 0.0;
  bool excludes_chance = false;  // CI excludes 0.5
  int rejected_pairs = 0;
  std::vector<std::string> warnings;
};

/// Observation-3 statistic: fraction of judged pairs where the higher-gain
/// step was called more critical. Pairs violating C_i > C_j (or referring to
/// unknown records/steps) are rejected on load and counted.
WinRateReport pairwise_gain_winrate(std::span<const TrajectoryLogRecord> records,
                                    const std::filesystem::path& judgments_path);

}  // namespace pacr::analysis
