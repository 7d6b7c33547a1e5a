#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "acraft/config.hpp"

namespace acraft {

enum ExitCode : int {
  kExitOk = 0,
  kExitRuntime = 1,
  kExitConfig = 2,  // bad config, bad arguments, unknown attack
  kExitMissingArtifact = 3,
};

struct GlobalOptions {
  std::optional<std::filesystem::path> config;  // desk defaults when absent
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool mock = false;  // force the mock generator
};

/// Loads the config (or defaults) and applies the command-line overrides.
RunConfig resolve_config(const GlobalOptions& opts);

// Artifact names inside a run directory.
inline constexpr const char* kCheckpointFile = "checkpoint.json";
inline constexpr const char* kLogFile = "evolution.jsonl";
inline constexpr const char* kBestSpecFile = "best.attackspec";
inline constexpr const char* kComparisonFile = "comparison.json";
inline constexpr const char* kComparisonCsv = "comparison.csv";

std::string comparison_to_string(const ComparisonReport& report);
ComparisonReport comparison_from_string(const std::string& text);

/// Method, session columns, Avg, Drop; clean row first, two decimals.
std::string format_session_table(const SessionReport& clean,
                                 const std::vector<ComparisonRow>& rows);
/// method,s0..s{n-1},avg,drop with full precision.
std::string session_table_csv(const SessionReport& clean, const std::vector<ComparisonRow>& rows);

/// One row per generation: t,action,reward,mu_phi,sigma2_phi,best_phi,best_id.
std::string fitness_csv(const std::vector<LogRecord>& log);

int cmd_evolve(const GlobalOptions& opts, bool resume, std::ostream& out, std::ostream& err);
int cmd_attack(const GlobalOptions& opts, const std::string& attack, std::ostream& out,
               std::ostream& err);
int cmd_verify_tables(std::ostream& out);
int cmd_report(const std::filesystem::path& run_dir, std::ostream& out, std::ostream& err);
int cmd_fscil_train(const GlobalOptions& opts, std::ostream& out, std::ostream& err);

}  // namespace acraft
