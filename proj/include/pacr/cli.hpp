#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pacr/optimizer.hpp"

namespace pacr::cli {

/// Parsed key = value config file (# comments, blank lines ignored).
/// Unknown keys are rejected with a field-level message.
struct RunConfig {
  opt::TrainConfig train;
  std::string suite = "small";  // builtin name or path to a suite JSON
  std::string out_dir = "pacr-run";
  std::string emit_log;  // optional JSONL of all training rollouts

  static RunConfig from_file(const std::filesystem::path& path);
  static RunConfig from_string(const std::string& text);

  /// Key/value snapshot for the manifest.
  std::map<std::string, std::string> snapshot() const;
};

/// Entry point used by the pacr binary and by in-process tests.
/// Exit codes: 0 success, 1 runtime/assertion failure, 2 usage/config error.
int run(const std::vector<std::string>& args, std::ostream& out,
        std::ostream& err);

}  // namespace pacr::cli
