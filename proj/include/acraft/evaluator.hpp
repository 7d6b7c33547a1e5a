#pragma once

#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <tuple>

#include "acraft/dataset.hpp"
#include "acraft/fscil.hpp"
#include "acraft/spec.hpp"

namespace acraft {

struct EvalConfig {
  double alpha = 0.5;  // weight of the old-class drop in j_succ
  double w_succ = 1.0;
  double w_cost = -0.2;
  double penalty = -1.0;
  double eps_max = 0.3;
  int t_max_config = kMaxIterations;

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;
};

/// Throws std::invalid_argument on alpha outside [0,1], w_cost >= 0 or bad caps.
void check_eval_config(const EvalConfig& cfg);

struct CostBreakdown {
  std::size_t grad_evals = 0;
  std::size_t poison_calls = 0;  // one per incremental session
  double grad_ratio = 0.0;       // in [0,1]
  double epsilon_ratio = 0.0;    // in [0,1]

  friend bool operator==(const CostBreakdown&, const CostBreakdown&) = default;
};

struct FitnessReport {
  double j_succ = 0.0;
  double j_cost = 0.0;
  double phi = 0.0;
  SessionReport session;
  bool failed = false;
  std::string error;
  CostBreakdown cost;

  friend bool operator==(const FitnessReport&, const FitnessReport&) = default;
};

/// alpha * (old-class drop) + (1 - alpha) * (new-class drop), in percentage
/// points, each averaged over the incremental sessions.
double j_success(const SessionReport& clean, const SessionReport& attacked, double alpha);

/// Gradient evaluations per poisoning call against t_max_config, and epsilon
/// against eps_max; both clamped to [0,1].
CostBreakdown cost_terms(double epsilon, std::size_t grad_evals, std::size_t poison_calls,
                         const EvalConfig& cfg);
double j_cost(const CostBreakdown& cost);

double fitness(double j_succ, double j_cost, const EvalConfig& cfg);

FitnessReport penalty_report(const EvalConfig& cfg, std::string error);

struct TaskContext {
  const Dataset* dataset = nullptr;
  const SessionSplit* split = nullptr;
  std::uint64_t seed = 0;
  FscilConfig fscil{};
};

struct CleanRun {
  FscilState base;  // state after base training, shared by every attacked run
  SessionReport report;
};

/// Write-once cache of clean runs keyed by (split, seed, training config).
/// Concurrent callers for the same key wait for the first computation.
class CleanRunCache {
 public:
  std::shared_ptr<const CleanRun> get(const TaskContext& task);
  std::size_t computed() const;

 private:
  using Key = std::tuple<std::uint64_t, std::uint64_t, std::uint64_t>;
  mutable std::mutex mutex_;
  std::map<Key, std::shared_future<std::shared_ptr<const CleanRun>>> runs_;
  std::size_t computed_ = 0;
};

std::shared_ptr<const CleanRun> compute_clean_run(const TaskContext& task);

/// Runs the poisoned protocol for one spec. Never throws for spec-level
/// failures: those come back as a penalty report.
FitnessReport evaluate(const AttackSpec& spec, const TaskContext& task, const EvalConfig& cfg,
                       CleanRunCache& cache);

/// Untargeted PGD on the true-class cross-entropy, as a spec.
AttackSpec pgd_fixture_spec(double epsilon = 0.1, int iterations = 10);
/// T = 0: leaves the shots untouched.
AttackSpec identity_spec();

/// Fixed comparison attacks: fgsm, pgd, cw, deepfool, acraft.
Poisoner baseline_poisoner(const std::string& name);

}  // namespace acraft
