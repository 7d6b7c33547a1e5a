#include "acraft/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "acraft/rng.hpp"

namespace acraft {

namespace {

double incremental_mean(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  return std::accumulate(values.begin() + 1, values.end(), 0.0) /
         static_cast<double>(values.size() - 1);
}

bool report_finite(const SessionReport& r) {
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  return finite(r.acc) && finite(r.base_acc) && finite(r.new_acc) && std::isfinite(r.avg);
}

std::uint64_t config_hash(const FscilConfig& cfg) {
  std::string text = std::to_string(cfg.epochs) + "/" + std::to_string(cfg.batch_size) + "/";
  char lr[32];
  std::snprintf(lr, sizeof lr, "%a", cfg.lr);
  text += lr;
  for (std::size_t w : cfg.hidden) text += "/" + std::to_string(w);
  return fnv1a(text);
}

}  // namespace

void check_eval_config(const EvalConfig& cfg) {
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) throw std::invalid_argument("alpha must be in [0, 1]");
  if (!(cfg.w_cost < 0.0)) throw std::invalid_argument("w_cost must be negative");
  if (!std::isfinite(cfg.w_succ) || !std::isfinite(cfg.penalty)) {
    throw std::invalid_argument("w_succ and penalty must be finite");
  }
  if (!(cfg.eps_max > 0.0)) throw std::invalid_argument("eps_max must be positive");
  if (cfg.t_max_config < 1) throw std::invalid_argument("t_max_config must be positive");
}

double j_success(const SessionReport& clean, const SessionReport& attacked, double alpha) {
  if (clean.sessions() != attacked.sessions() ||
      clean.base_acc.size() != attacked.base_acc.size() ||
      clean.new_acc.size() != attacked.new_acc.size()) {
    throw std::invalid_argument("reports cover different session counts");
  }
  const double old_drop = incremental_mean(clean.base_acc) - incremental_mean(attacked.base_acc);
  const double new_drop = incremental_mean(clean.new_acc) - incremental_mean(attacked.new_acc);
  return alpha * old_drop + (1.0 - alpha) * new_drop;
}

CostBreakdown cost_terms(double epsilon, std::size_t grad_evals, std::size_t poison_calls,
                         const EvalConfig& cfg) {
  CostBreakdown c;
  c.grad_evals = grad_evals;
  c.poison_calls = poison_calls;
  if (poison_calls > 0) {
    c.grad_ratio = std::min(1.0, static_cast<double>(grad_evals) /
                                     (static_cast<double>(cfg.t_max_config) *
                                      static_cast<double>(poison_calls)));
  }
  c.epsilon_ratio = std::clamp(epsilon / cfg.eps_max, 0.0, 1.0);
  return c;
}

double j_cost(const CostBreakdown& cost) { return 0.5 * cost.grad_ratio + 0.5 * cost.epsilon_ratio; }

double fitness(double j_succ, double j_cost_value, const EvalConfig& cfg) {
  return cfg.w_succ * j_succ + cfg.w_cost * j_cost_value;
}

FitnessReport penalty_report(const EvalConfig& cfg, std::string error) {
  FitnessReport r;
  r.failed = true;
  r.phi = cfg.penalty;
  r.error = std::move(error);
  return r;
}

std::shared_ptr<const CleanRun> compute_clean_run(const TaskContext& task) {
  if (task.dataset == nullptr || task.split == nullptr) {
    throw std::invalid_argument("task context needs a dataset and a split");
  }
  auto run = std::make_shared<CleanRun>();
  run->base = train_base(*task.split, *task.dataset, task.fscil, task.seed);
  run->report = run_protocol(*task.split, *task.dataset, {}, task.seed, task.fscil, &run->base);
  return run;
}

std::shared_ptr<const CleanRun> CleanRunCache::get(const TaskContext& task) {
  if (task.split == nullptr) throw std::invalid_argument("task context needs a split");
  const Key key{task.split->fingerprint(), task.seed, config_hash(task.fscil)};
  std::promise<std::shared_ptr<const CleanRun>> promise;
  std::unique_lock lock(mutex_);
  if (auto it = runs_.find(key); it != runs_.end()) {
    auto future = it->second;
    lock.unlock();
    return future.get();
  }
  runs_.emplace(key, promise.get_future().share());
  ++computed_;
  lock.unlock();
  try {
    auto run = compute_clean_run(task);
    promise.set_value(run);
    return run;
  } catch (...) {
    promise.set_exception(std::current_exception());
    lock.lock();
    runs_.erase(key);
    throw;
  }
}

std::size_t CleanRunCache::computed() const {
  std::lock_guard lock(mutex_);
  return computed_;
}

FitnessReport evaluate(const AttackSpec& spec, const TaskContext& task, const EvalConfig& cfg,
                       CleanRunCache& cache) {
  check_eval_config(cfg);
  const auto clean = cache.get(task);

  AttackFn attack;
  try {
    attack = interpret(spec);
  } catch (const std::exception& e) {
    return penalty_report(cfg, e.what());
  }

  std::size_t grad_evals = 0;
  std::size_t calls = 0;
  const Poisoner poisoner = [&](const Tensor& shots, std::span<const int> labels,
                                const ModelView& view) {
    ModelView counted = view;
    counted.grad_evals = &grad_evals;
    ++calls;
    return attack(shots, labels, counted);
  };

  FitnessReport r;
  try {
    r.session = run_protocol(*task.split, *task.dataset, poisoner, task.seed, task.fscil, &clean->base);
  } catch (const std::exception& e) {
    return penalty_report(cfg, e.what());
  }
  if (!report_finite(r.session)) return penalty_report(cfg, "non-finite accuracy");

  r.j_succ = j_success(clean->report, r.session, cfg.alpha);
  r.cost = cost_terms(spec.budget.epsilon, grad_evals, calls, cfg);
  r.j_cost = j_cost(r.cost);
  r.phi = fitness(r.j_succ, r.j_cost, cfg);
  if (!std::isfinite(r.phi)) return penalty_report(cfg, "non-finite fitness");
  return r;
}

AttackSpec pgd_fixture_spec(double epsilon, int iterations) {
  AttackSpec s;
  s.id = "pgd-fixture";
  s.rationale = "Untargeted PGD on the true-class cross-entropy.";
  s.family = Family::iterative;
  s.budget = {epsilon, epsilon / 4.0, iterations};
  s.loss = {1.0, 0.0, 0.0};
  s.step_direction = +1;
  s.random_start = false;
  s.per_step_projection = true;
  return s;
}

AttackSpec identity_spec() {
  AttackSpec s = pgd_fixture_spec();
  s.id = "identity";
  s.rationale = "No perturbation.";
  s.budget.iterations = 0;
  return s;
}

Poisoner baseline_poisoner(const std::string& name) {
  if (name == "fgsm") {
    return [](const Tensor& x, std::span<const int> y, const ModelView& v) {
      return fgsm(x, y, v, 0.1);
    };
  }
  if (name == "pgd") {
    return [](const Tensor& x, std::span<const int> y, const ModelView& v) {
      return pgd(x, y, v, PerturbationBudget{0.1, 0.025, 10});
    };
  }
  if (name == "cw") {
    return [](const Tensor& x, std::span<const int> y, const ModelView& v) {
      return carlini_wagner(x, y, v, CwParams{});
    };
  }
  if (name == "deepfool") {
    return [](const Tensor& x, std::span<const int> y, const ModelView& v) {
      return deepfool(x, y, v, DeepFoolParams{}).x_adv;
    };
  }
  if (name == "acraft") {
    return [](const Tensor& x, std::span<const int> y, const ModelView& v) {
      AcraftParams p;
      p.budget = {0.1, 0.025, 10};
      return acraft_attack(x, y, v, p);
    };
  }
  throw std::invalid_argument("unknown attack '" + name + "'");
}

}  // namespace acraft
