#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "acraft/dataset.hpp"
#include "acraft/orchestrator.hpp"

namespace acraft {

struct DatasetConfig {
  std::string source = "synthetic";  // or "binary"
  std::string path;                  // binary source only
  std::size_t classes = 40;
  std::size_t per_class = 60;
  std::size_t dim = 32;
  double separation = 8.0;  // in noise standard deviations
};

struct SplitConfig {
  std::size_t base_classes = 20;
  std::size_t sessions = 4;
  std::size_t ways = 5;
  std::size_t shots = 5;
  std::size_t test_per_class = 30;
};

struct RunConfig {
  DatasetConfig dataset;
  SplitConfig split;
  FscilConfig fscil;
  EvolutionConfig evolution;
  EvalConfig evaluator;
  ControllerConfig controller;
  GeneratorSettings generator;
  std::uint64_t seed = 1;
  std::string output_dir = "acraft-run";
};

/// Carries one "path: message" diagnostic per problem found.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> diagnostics);
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

/// Every key is optional; missing keys keep their defaults, unknown keys
/// and out-of-range values are rejected with their field paths.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Full config with every key spelled out.
std::string config_to_string(const RunConfig& cfg);

/// The desk task the config describes.
struct Task {
  Dataset dataset;
  SessionSplit split;
  std::uint64_t seed = 0;
  FscilConfig fscil;

  TaskContext context() const { return {&dataset, &split, seed, fscil}; }
};

Task build_task(const RunConfig& cfg);
EvolutionSetup make_setup(const RunConfig& cfg, const Task& task);

}  // namespace acraft
