#include <atomic>
#include <filesystem>
#include <set>

#include "doctest.h"
#include "support.hpp"

#include "acraft/orchestrator.hpp"

using namespace acraft;

namespace {

const Task& small_task() {
  static const Task task = build_task(testing::small_config());
  return task;
}

EvolutionSetup small_setup(std::uint64_t seed = 3) {
  RunConfig cfg = testing::small_config();
  cfg.seed = seed;
  return make_setup(cfg, small_task());
}

Member member(std::string id, double phi, double j_cost = 0.0) {
  Member m;
  m.spec.id = std::move(id);
  m.fitness.phi = phi;
  m.fitness.j_cost = j_cost;
  return m;
}

std::vector<std::string> ids(const std::vector<Member>& ms) {
  std::vector<std::string> out;
  for (const Member& m : ms) out.push_back(m.spec.id);
  return out;
}

std::vector<GenerationStats> means(std::vector<double> mu) {
  std::vector<GenerationStats> h;
  for (double m : mu) h.push_back({m, 0.0, m});
  return h;
}

}  // namespace

TEST_CASE("select_top_n") {
  CHECK(ids(select_top_n({member("a", 3), member("b", 1), member("c", 2)}, 2)) == std::vector<std::string>{"a", "c"});
  CHECK(ids(select_top_n({member("a", 1), member("b", 2)}, 5)) == std::vector<std::string>{"b", "a"});
  CHECK(ids(select_top_n({member("a", 1.0, 0.4), member("b", 1.0, 0.2)}, 1)) == std::vector<std::string>{"b"});
  CHECK(ids(select_top_n({member("z", 1.0, 0.2), member("y", 1.0, 0.2)}, 1)) == std::vector<std::string>{"y"});
}

TEST_CASE("convergence test") {
  CHECK_FALSE(converged(means({1, 1, 1}), 5, 0.01));
  CHECK_FALSE(converged(means({1, 1, 1, 1, 1}), 5, 0.01));
  CHECK(converged(means({1, 1, 1, 1, 1, 1}), 5, 0.01));
  CHECK_FALSE(converged(means({1, 2, 4, 8, 16, 32, 64}), 5, 0.01));
  CHECK(converged(means({10, 0, 0, 0, 0, 10.05}), 5, 0.01));
  CHECK(converged(means({0, 5, 5, 5, 5, 0}), 5, 0.01));
}

TEST_CASE("initialization is deterministic and fully evaluated") {
  Orchestrator a(small_setup()), b(small_setup());
  const RunState s = a.initialize();
  CHECK(s == b.initialize());
  CHECK(s.population.members.size() <= 4);
  CHECK_FALSE(s.population.members.empty());
  for (const Member& m : s.population.members) CHECK_FALSE(m.fitness.failed);
  CHECK(s.generation == 0);
  CHECK(s.history.empty());
}

TEST_CASE("population of one") {
  EvolutionSetup setup = small_setup();
  setup.evolution.population = 1;
  Orchestrator o(setup);
  const RunState s = o.initialize();
  CHECK(s.population.members.size() == 1);
  const RunState next = o.step(s);
  CHECK(next.population.members.size() == 1);
}

TEST_CASE("a budget of one runs exactly one generation") {
  EvolutionSetup setup = small_setup();
  setup.evolution.t_max = 1;
  int calls = 0;
  Orchestrator o(setup);
  o.on_generation = [&](const RunState&) { ++calls; };
  const RunState s = o.run();
  CHECK(s.generation == 1);
  CHECK(s.history.size() == 1);
  CHECK(s.log.size() == 1);
  CHECK(calls == 1);
  // the single transition was consumed at the episode end
  CHECK(s.buffer.empty());
}

TEST_CASE("elitism and population invariants hold every generation") {
  EvolutionSetup setup = small_setup(8);
  setup.evolution.t_max = 6;
  Orchestrator o(setup);
  RunState s = o.initialize();
  double best = s.population.members.front().fitness.phi;
  double best_ever = s.best_ever.fitness.phi;
  while (!o.finished(s)) {
    s = o.step(s);
    const auto& ms = s.population.members;
    CHECK(ms.size() <= setup.evolution.population);
    CHECK(std::is_sorted(ms.begin(), ms.end(), [](const Member& x, const Member& y) {
      return x.fitness.phi > y.fitness.phi;
    }));
    std::set<std::string> unique;
    for (const Member& m : ms) unique.insert(m.spec.id);
    CHECK(unique.size() == ms.size());
    CHECK(ms.front().fitness.phi >= best);
    CHECK(s.best_ever.fitness.phi >= best_ever);
    CHECK(s.best_ever.fitness.phi >= ms.front().fitness.phi);
    CHECK(s.log.back().best_phi == s.best_ever.fitness.phi);
    best = ms.front().fitness.phi;
    best_ever = s.best_ever.fitness.phi;
  }
  CHECK(s.history.size() == s.generation);
}

TEST_CASE("runs are bitwise reproducible") {
  EvolutionSetup setup = small_setup(5);
  CHECK(Orchestrator(setup).run() == Orchestrator(setup).run());
  setup.evolution.workers = 1;
  EvolutionSetup wide = setup;
  wide.evolution.workers = 8;
  CHECK(Orchestrator(setup).run() == Orchestrator(wide).run());
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  const EvolutionSetup setup = small_setup(6);
  const RunState full = Orchestrator(setup).run();

  Orchestrator first(setup);
  RunState s = first.initialize();
  s = first.step(s);
  s = first.step(s);
  const auto path = std::filesystem::temp_directory_path() / "acraft-tests" / "resume.json";
  std::filesystem::create_directories(path.parent_path());
  save_checkpoint(s, path);
  Orchestrator second(setup);
  CHECK(second.resume(load_checkpoint(path)) == full);
}

TEST_CASE("checkpoint round trip on random states") {
  Rng rng(17);
  for (int c = 0; c < 1000; ++c) {
    const RunState s = testing::random_state(rng);
    const std::string text = checkpoint_to_string(s);
    const RunState back = checkpoint_from_string(text);
    CHECK(back == s);
    CHECK(checkpoint_to_string(back) == text);
  }
  CHECK_THROWS(checkpoint_from_string("{}"));
  CHECK_THROWS(checkpoint_from_string("not json"));
}

TEST_CASE("log lines round trip") {
  Rng rng(19);
  for (int c = 0; c < 200; ++c) {
    const LogRecord r{rng.below(100), "synth/proportional/i1", rng.normal(), rng.normal(), rng.uniform(),
                      rng.normal() * 1e6, "g-" + std::to_string(c)};
    const std::string line = log_line(r);
    CHECK(line.find('\n') == std::string::npos);
    CHECK(parse_log_line(line) == r);
  }
  const auto j = nlohmann::json::parse(log_line({1, "a", 0.5, 0.25, 0.125, 1.0, "x"}));
  for (const char* key : {"t", "action", "reward", "mu_phi", "sigma2_phi", "best_phi", "best_id"}) {
    CHECK(j.contains(key));
  }
}

TEST_CASE("failed offspring earn the penalty and never stop the loop") {
  testing::StubServer stub([](int, const httplib::Request&, httplib::Response& res) {
    res.set_content(testing::chat_body("I cannot help with a spec today."), "application/json");
  });
  EvolutionSetup setup = small_setup();
  setup.generator.mode = GeneratorMode::llm;
  setup.generator.endpoint = stub.endpoint();
  setup.evolution.seed_specs = sample_genesis(4, 4);  // P_0 needs no generation
  setup.evolution.t_max = 3;
  const RunState s = Orchestrator(setup).run();
  CHECK(s.generation == 3);
  for (const LogRecord& r : s.log) CHECK(r.reward == setup.eval.penalty);
  CHECK(s.failures == 3 * setup.evolution.offspring);
  CHECK(stub.calls() == static_cast<int>(2 * s.failures));
}

TEST_CASE("an all-failed initial population is an initialization error") {
  testing::StubServer stub([](int, const httplib::Request&, httplib::Response& res) { res.status = 400; });
  EvolutionSetup setup = small_setup();
  setup.generator.mode = GeneratorMode::llm;
  setup.generator.endpoint = stub.endpoint();
  Orchestrator o(setup);
  CHECK_THROWS_AS(o.initialize(), InitializationError);
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<std::atomic<int>> hits(50);
  parallel_for(50, 4, [&](std::size_t i) { ++hits[i]; });
  for (const auto& h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
                    if (i == 7) throw std::runtime_error("seven");
                  }),
                  std::runtime_error);
  parallel_for(0, 4, [](std::size_t) { FAIL("no work expected"); });
}

TEST_CASE("comparison and naive baseline") {
  const EvolutionSetup setup = small_setup();
  CleanRunCache cache;
  const ComparisonReport cmp = compare(pgd_fixture_spec(), setup.task, cache);
  REQUIRE(cmp.rows.size() == 5);
  CHECK(cmp.rows[0].name == "g*");
  for (const ComparisonRow& r : cmp.rows) {
    CHECK(r.report.acc[0] == cmp.clean.acc[0]);
    CHECK(r.drop == doctest::Approx(cmp.clean.avg - r.report.avg).epsilon(1e-12));
  }
  const NaiveResult a = run_naive(setup, cache);
  CHECK(a.member.spec.id == "naive");
  CHECK_FALSE(a.member.fitness.failed);
  CHECK(run_naive(setup, cache).member == a.member);
}
