#include <thread>

#include "doctest.h"
#include "support.hpp"

#include "acraft/evaluator.hpp"

using namespace acraft;

namespace {

SessionReport report(std::vector<double> base, std::vector<double> fresh) {
  SessionReport r;
  r.base_acc = std::move(base);
  r.new_acc = std::move(fresh);
  for (std::size_t s = 0; s < r.base_acc.size(); ++s) r.acc.push_back((r.base_acc[s] + r.new_acc[s]) / 2);
  r.avg = avg_accuracy(r.acc);
  return r;
}

const Task& small_task() {
  static const Task task = build_task(testing::small_config());
  return task;
}

const Task& desk() {
  static const Task task = build_task(RunConfig{});
  return task;
}

}  // namespace

TEST_CASE("j_success arithmetic") {
  const SessionReport clean = report({90, 80, 70}, {0, 60, 70});
  // old drop 30, new drop 50 over the incremental sessions
  const SessionReport attacked = report({90, 50, 40}, {0, 10, 20});
  CHECK(j_success(clean, clean, 0.5) == 0.0);
  CHECK(j_success(clean, attacked, 0.5) == doctest::Approx(40.0).epsilon(1e-14));
  CHECK(j_success(clean, attacked, 1.0) == doctest::Approx(30.0).epsilon(1e-14));
  CHECK(j_success(clean, attacked, 0.0) == doctest::Approx(50.0).epsilon(1e-14));
  CHECK_THROWS_AS(j_success(clean, report({90, 50}, {0, 10}), 0.5), std::invalid_argument);
}

TEST_CASE("j_cost terms") {
  EvalConfig cfg;
  cfg.t_max_config = 20;
  cfg.eps_max = 0.3;
  // ten gradient evaluations per poisoning call against a cap of twenty
  const CostBreakdown c = cost_terms(0.0, 40, 4, cfg);
  CHECK(c.grad_ratio == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(j_cost(c) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(j_cost(cost_terms(0.3, 80, 4, cfg)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(j_cost(cost_terms(0.3, 800, 4, cfg)) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(j_cost(cost_terms(0.0, 0, 4, cfg)) == 0.0);
  CHECK(j_cost(cost_terms(0.0, 0, 0, cfg)) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 500; ++i) {
    const CostBreakdown r = cost_terms(rng.uniform(0, 1), rng.below(1000), rng.below(6), cfg);
    CHECK(r.grad_ratio >= 0.0);
    CHECK(r.grad_ratio <= 1.0);
    CHECK(r.epsilon_ratio >= 0.0);
    CHECK(r.epsilon_ratio <= 1.0);
  }
}

TEST_CASE("fitness is monotone in success and antitone in cost") {
  const EvalConfig cfg;
  Rng rng(2);
  for (int i = 0; i < 500; ++i) {
    const double s = rng.uniform(-50, 100), c = rng.uniform(0, 1), d = rng.uniform(1e-6, 10);
    CHECK(fitness(s + d, c, cfg) > fitness(s, c, cfg));
    CHECK(fitness(s, std::min(1.0, c + d / 10), cfg) <= fitness(s, c, cfg));
  }
  CHECK(fitness(10.0, 0.5, cfg) == doctest::Approx(10.0 - 0.1));
}

TEST_CASE("config checks") {
  EvalConfig cfg;
  cfg.w_cost = 0.1;
  CHECK_THROWS_AS(check_eval_config(cfg), std::invalid_argument);
  cfg = {};
  cfg.alpha = 1.5;
  CHECK_THROWS_AS(check_eval_config(cfg), std::invalid_argument);
  CHECK_NOTHROW(check_eval_config(EvalConfig{}));
}

TEST_CASE("identity spec has exactly zero success") {
  CleanRunCache cache;
  const FitnessReport r = evaluate(identity_spec(), small_task().context(), EvalConfig{}, cache);
  CHECK_FALSE(r.failed);
  CHECK(r.j_succ == 0.0);
  CHECK(r.session == cache.get(small_task().context())->report);
}

TEST_CASE("a spec the interpreter rejects gets the penalty") {
  CleanRunCache cache;
  AttackSpec bad = pgd_fixture_spec();
  bad.mu = 7.0;
  const FitnessReport r = evaluate(bad, small_task().context(), EvalConfig{}, cache);
  CHECK(r.failed);
  CHECK(r.phi == -1.0);
  CHECK_FALSE(r.error.empty());

  EvalConfig cfg;
  cfg.penalty = -5.0;
  CHECK(evaluate(bad, small_task().context(), cfg, cache).phi == -5.0);
}

TEST_CASE("pgd fixture beats the identity spec on the desk task") {
  CleanRunCache cache;
  const FitnessReport pgd = evaluate(pgd_fixture_spec(0.1, 10), desk().context(), EvalConfig{}, cache);
  const FitnessReport id = evaluate(identity_spec(), desk().context(), EvalConfig{}, cache);
  CHECK(pgd.phi > id.phi);
  CHECK(pgd.j_succ > 0.0);
  // one gradient per step, one poisoning call per incremental session
  CHECK(pgd.cost.poison_calls == desk().split.sessions.size());
  CHECK(pgd.cost.grad_evals == 10 * pgd.cost.poison_calls);
  CHECK(pgd.cost.grad_ratio == doctest::Approx(0.5));
  CHECK(cache.computed() == 1);
}

TEST_CASE("evaluation is deterministic and session 0 never moves") {
  CleanRunCache a, b;
  const auto clean = a.get(small_task().context());
  for (const AttackSpec& s : sample_genesis(31, 6)) {
    const FitnessReport x = evaluate(s, small_task().context(), EvalConfig{}, a);
    CHECK(x == evaluate(s, small_task().context(), EvalConfig{}, b));
    if (!x.failed) CHECK(x.session.acc[0] == clean->report.acc[0]);
  }
}

TEST_CASE("clean run cache is transparent and computes once under contention") {
  CleanRunCache cache;
  const TaskContext task = small_task().context();
  std::vector<std::shared_ptr<const CleanRun>> got(8);
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < got.size(); ++i) {
    threads.emplace_back([&, i] { got[i] = cache.get(task); });
  }
  for (auto& t : threads) t.join();
  CHECK(cache.computed() == 1);
  for (const auto& r : got) CHECK(r.get() == got[0].get());
  const auto fresh = compute_clean_run(task);
  CHECK(fresh->report == got[0]->report);
  CHECK(fresh->base == got[0]->base);

  TaskContext other = task;
  other.seed += 1;
  cache.get(other);
  CHECK(cache.computed() == 2);
}

TEST_CASE("concurrent evaluations match sequential ones") {
  CleanRunCache shared, solo;
  const auto specs = sample_genesis(77, 4);
  std::vector<FitnessReport> par(specs.size());
  std::vector<std::thread> threads;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    threads.emplace_back([&, i] { par[i] = evaluate(specs[i], small_task().context(), EvalConfig{}, shared); });
  }
  for (auto& t : threads) t.join();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    CHECK(par[i] == evaluate(specs[i], small_task().context(), EvalConfig{}, solo));
  }
}

TEST_CASE("penalty report") {
  EvalConfig cfg;
  cfg.penalty = -3.0;
  const FitnessReport r = penalty_report(cfg, "boom");
  CHECK(r.failed);
  CHECK(r.phi == -3.0);
  CHECK(r.error == "boom");
}

TEST_CASE("baseline poisoners") {
  for (const char* name : {"fgsm", "pgd", "cw", "deepfool", "acraft"}) CHECK(static_cast<bool>(baseline_poisoner(name)));
  CHECK_THROWS(baseline_poisoner("nope"));
}
