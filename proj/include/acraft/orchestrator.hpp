#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "acraft/controller.hpp"
#include "acraft/evaluator.hpp"
#include "acraft/generator.hpp"

namespace acraft {

struct Member {
  AttackSpec spec;
  FitnessReport fitness;

  friend bool operator==(const Member&, const Member&) = default;
};

struct Population {
  std::vector<Member> members;  // sorted by phi descending
  std::size_t capacity = 8;
  std::size_t generation = 0;

  std::vector<double> fitness() const;
  friend bool operator==(const Population&, const Population&) = default;
};

struct GenerationStats {
  double mean = 0.0;
  double variance = 0.0;
  double best = 0.0;

  friend bool operator==(const GenerationStats&, const GenerationStats&) = default;
};

struct LogRecord {
  std::size_t t = 0;
  std::string action;
  double reward = 0.0;
  double mu_phi = 0.0;
  double sigma2_phi = 0.0;
  double best_phi = 0.0;
  std::string best_id;

  friend bool operator==(const LogRecord&, const LogRecord&) = default;
};

enum class GeneratorMode { mock, llm, naive };

std::string_view mode_name(GeneratorMode mode);

struct GeneratorSettings {
  GeneratorMode mode = GeneratorMode::mock;
  EndpointConfig endpoint{};
  MockOptions mock{};
  bool naive_uses_llm = false;  // naive mode: call the endpoint instead of the mock
};

struct EvolutionConfig {
  std::size_t population = 8;  // N
  std::size_t t_max = 15;
  std::size_t offspring = 4;   // |G'_t|
  std::size_t window = 5;      // W
  double tol = 0.01;
  std::size_t update_interval = 0;  // PPO update every k generations; 0: once, at episode end
  std::size_t workers = 4;          // in-flight evaluations / endpoint calls
  std::vector<AttackSpec> seed_specs;
};

/// Everything one evolution run needs besides the controller's own state.
struct EvolutionSetup {
  TaskContext task;
  EvalConfig eval{};
  ControllerConfig controller{};
  EvolutionConfig evolution{};
  GeneratorSettings generator{};
  std::uint64_t seed = 0;
};

struct RunState {
  Population population;
  Controller controller;
  std::uint64_t seed = 0;
  std::size_t generation = 0;
  GenerationStats initial;               // statistics of P_0
  std::vector<GenerationStats> history;  // one entry per completed generation
  std::vector<Transformation> recent;    // most recent first
  std::vector<Transition> buffer;
  Member best_ever;
  std::vector<LogRecord> log;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::size_t failures = 0;

  friend bool operator==(const RunState&, const RunState&) = default;
};

class InitializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Keeps the n best by phi; ties go to the lower j_cost, then the smaller id.
std::vector<Member> select_top_n(std::vector<Member> members, std::size_t n);

/// True when |mu(t) - mu(t-W)| <= tol * max(|mu(t-W)|, 1e-9) with more than W entries.
bool converged(std::span<const GenerationStats> history, std::size_t window, double tol);

GenerationStats population_stats(const Population& p);

class Orchestrator {
 public:
  explicit Orchestrator(EvolutionSetup setup);

  RunState initialize();
  RunState step(RunState state);
  bool finished(const RunState& state) const;
  /// initialize + step until T_max or convergence.
  RunState run();
  /// Continues a (possibly restored) state until finished.
  RunState resume(RunState state);

  const EvolutionSetup& setup() const { return setup_; }
  CleanRunCache& cache() { return cache_; }

  /// Called after every completed generation (for checkpoints and logs).
  std::function<void(const RunState&)> on_generation;

 private:
  struct Candidate {
    GeneratorResponse response;
    Member member;
  };

  std::vector<Candidate> produce(const std::vector<GeneratorRequest>& requests,
                                 std::span<const std::string> ids);
  GeneratorResponse generate(const GeneratorRequest& req) const;

  EvolutionSetup setup_;
  CleanRunCache cache_;
};

struct ComparisonRow {
  std::string name;
  SessionReport report;
  double drop = 0.0;
};

struct ComparisonReport {
  SessionReport clean;
  std::vector<ComparisonRow> rows;  // g* first, then the fixed baselines
};

ComparisonReport compare(const AttackSpec& best, const TaskContext& task, CleanRunCache& cache);

struct NaiveResult {
  GeneratorResponse response;
  Member member;
};

/// The one-shot baseline: a single generated spec, evaluated once.
NaiveResult run_naive(const EvolutionSetup& setup, CleanRunCache& cache);

// Checkpoints and logs -------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_string(const RunState& state);
RunState checkpoint_from_string(const std::string& text);
void save_checkpoint(const RunState& state, const std::filesystem::path& path);
RunState load_checkpoint(const std::filesystem::path& path);

std::string log_line(const LogRecord& record);
LogRecord parse_log_line(const std::string& line);

/// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first
/// exception after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

}  // namespace acraft
