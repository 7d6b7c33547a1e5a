#include "acraft/orchestrator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "acraft/rng.hpp"
#include "json.hpp"

namespace acraft {

using nlohmann::ordered_json;

namespace {

std::uint64_t tag(std::string_view purpose) { return fnv1a(purpose); }

std::string offspring_id(std::size_t t, std::size_t k) {
  return "g" + std::to_string(t) + "-" + std::to_string(k);
}

std::vector<Member> sorted(std::vector<Member> members) {
  std::stable_sort(members.begin(), members.end(), [](const Member& a, const Member& b) {
    if (a.fitness.phi != b.fitness.phi) return a.fitness.phi > b.fitness.phi;
    if (a.fitness.j_cost != b.fitness.j_cost) return a.fitness.j_cost < b.fitness.j_cost;
    return a.spec.id < b.spec.id;
  });
  return members;
}

const Member& pick_proportional(const std::vector<Member>& members, Rng& rng) {
  double lo = members.front().fitness.phi;
  for (const Member& m : members) lo = std::min(lo, m.fitness.phi);
  std::vector<double> w;
  w.reserve(members.size());
  for (const Member& m : members) w.push_back(m.fitness.phi - lo + 1e-9);
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (u < w[i]) return members[i];
    u -= w[i];
  }
  return members.back();
}

std::vector<const Member*> choose_parents(const std::vector<Member>& members, ParentSelector selector,
                                          std::size_t count, Rng& rng) {
  std::vector<const Member*> out;
  if (members.empty()) throw std::logic_error("no members to select parents from");
  if (selector == ParentSelector::best) {
    for (std::size_t i = 0; i < count; ++i) out.push_back(&members[std::min(i, members.size() - 1)]);
    return out;
  }
  // Distinct parents while the population allows it.
  std::vector<std::size_t> taken;
  for (std::size_t i = 0; i < count; ++i) {
    const Member* m = nullptr;
    for (int attempt = 0; attempt < 32; ++attempt) {
      m = selector == ParentSelector::random ? &members[rng.below(members.size())]
                                             : &pick_proportional(members, rng);
      const std::size_t idx = static_cast<std::size_t>(m - members.data());
      if (taken.size() >= members.size() ||
          std::find(taken.begin(), taken.end(), idx) == taken.end()) {
        taken.push_back(idx);
        break;
      }
    }
    out.push_back(m);
  }
  return out;
}

// Strictly better only, so the earliest of equal candidates is kept.
void update_best(RunState& state, const Member& m) {
  if (!m.fitness.failed && m.fitness.phi > state.best_ever.fitness.phi) state.best_ever = m;
}

}  // namespace

std::string_view mode_name(GeneratorMode mode) {
  switch (mode) {
    case GeneratorMode::mock: return "mock";
    case GeneratorMode::llm: return "llm";
    case GeneratorMode::naive: return "naive";
  }
  return "unknown";
}

std::vector<double> Population::fitness() const {
  std::vector<double> out;
  out.reserve(members.size());
  for (const Member& m : members) out.push_back(m.fitness.phi);
  return out;
}

std::vector<Member> select_top_n(std::vector<Member> members, std::size_t n) {
  if (n == 0) throw std::invalid_argument("select_top_n needs n >= 1");
  members = sorted(std::move(members));
  if (members.size() > n) members.resize(n);
  return members;
}

bool converged(std::span<const GenerationStats> history, std::size_t window, double tol) {
  if (history.size() <= window) return false;
  const double now = history.back().mean;
  const double then = history[history.size() - 1 - window].mean;
  return std::abs(now - then) <= tol * std::max(std::abs(then), 1e-9);
}

GenerationStats population_stats(const Population& p) {
  const std::vector<double> f = p.fitness();
  const PolicyState s = featurize(f, {}, 0, 1);
  return {s.mean, s.variance, s.best};
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t threads = std::max<std::size_t>(1, std::min(workers, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------

Orchestrator::Orchestrator(EvolutionSetup setup) : setup_(std::move(setup)) {
  const EvolutionConfig& e = setup_.evolution;
  if (e.population == 0) throw std::invalid_argument("population size must be positive");
  if (e.offspring == 0) throw std::invalid_argument("offspring count must be positive");
  if (e.seed_specs.size() > e.population) {
    throw std::invalid_argument("more seed specs than population slots");
  }
  check_eval_config(setup_.eval);
}

GeneratorResponse Orchestrator::generate(const GeneratorRequest& req) const {
  if (setup_.generator.mode == GeneratorMode::llm) return llm_generate(req, setup_.generator.endpoint);
  return mock_generate(req, setup_.generator.mock);
}

std::vector<Orchestrator::Candidate> Orchestrator::produce(
    const std::vector<GeneratorRequest>& requests, std::span<const std::string> ids) {
  std::vector<Candidate> out(requests.size());
  parallel_for(requests.size(), setup_.evolution.workers, [&](std::size_t k) {
    Candidate& c = out[k];
    c.response = generate(requests[k]);
    if (!c.response.ok()) {
      c.member.spec.id = ids[k];
      c.member.fitness = penalty_report(
          setup_.eval, std::string(status_name(c.response.status)) + ": " + c.response.error);
      return;
    }
    c.member.spec = c.response.spec;
    c.member.spec.id = ids[k];
    c.member.fitness = evaluate(c.member.spec, setup_.task, setup_.eval, cache_);
  });
  return out;
}

RunState Orchestrator::initialize() {
  const EvolutionConfig& e = setup_.evolution;
  RunState state;
  state.seed = setup_.seed;
  state.controller = Controller(kStateDim, kActionCount, setup_.controller,
                                derive_seed(setup_.seed, {tag("controller")}));
  state.population.capacity = e.population;

  std::vector<Member> members;
  for (std::size_t k = 0; k < e.seed_specs.size(); ++k) {
    Member m{e.seed_specs[k], {}};
    if (m.spec.id.empty()) m.spec.id = "seed-" + std::to_string(k);
    members.push_back(m);
  }
  parallel_for(members.size(), e.workers, [&](std::size_t k) {
    members[k].fitness = evaluate(members[k].spec, setup_.task, setup_.eval, cache_);
  });

  std::vector<GeneratorRequest> requests;
  std::vector<std::string> ids;
  for (std::size_t k = e.seed_specs.size(); k < e.population; ++k) {
    GeneratorRequest req;
    req.transformation = Transformation::genesis;
    req.instruction.kind = instruction_from_index(k % kInstructionCount);
    req.generation = 0;
    req.seed = derive_seed(setup_.seed, {0, k, tag("generate")});
    requests.push_back(req);
    ids.push_back(offspring_id(0, k));
  }
  for (Candidate& c : produce(requests, ids)) {
    state.prompt_tokens += c.response.usage.prompt;
    state.completion_tokens += c.response.usage.completion;
    members.push_back(std::move(c.member));
  }

  std::vector<Member> alive;
  for (Member& m : members) {
    if (m.fitness.failed) {
      ++state.failures;
    } else {
      alive.push_back(std::move(m));
    }
  }
  if (alive.empty()) throw InitializationError("every initial candidate failed");
  state.population.members = select_top_n(std::move(alive), e.population);
  state.initial = population_stats(state.population);
  state.best_ever = state.population.members.front();
  return state;
}

bool Orchestrator::finished(const RunState& state) const {
  return state.generation >= setup_.evolution.t_max ||
         converged(state.history, setup_.evolution.window, setup_.evolution.tol);
}

RunState Orchestrator::step(RunState state) {
  const EvolutionConfig& e = setup_.evolution;
  if (state.generation >= e.t_max) throw std::logic_error("generation budget exhausted");
  const std::size_t t = state.generation + 1;

  const PolicyState s_t =
      featurize(state.population.fitness(), state.recent, state.generation, e.t_max);
  const std::vector<double> features = s_t.features();
  Rng action_rng(derive_seed(state.seed, {t, 0, tag("action")}));
  const auto [action_index_value, log_prob] = state.controller.sample(features, action_rng);
  const EvolutionAction action = action_from_index(action_index_value);
  const double value_now = state.controller.value(features);

  std::vector<GeneratorRequest> requests;
  std::vector<std::string> ids;
  for (std::size_t k = 0; k < e.offspring; ++k) {
    GeneratorRequest req;
    req.transformation = action.transformation;
    req.instruction.kind = instruction_from_index(action.instruction);
    req.generation = t;
    req.seed = derive_seed(state.seed, {t, k, tag("generate")});
    const std::size_t parent_count = action.transformation == Transformation::genesis  ? 0
                                     : action.transformation == Transformation::refine ? 1
                                                                                       : 2;
    if (parent_count > 0) {
      Rng parent_rng(derive_seed(state.seed, {t, k, tag("parents")}));
      for (const Member* p :
           choose_parents(state.population.members, action.selector, parent_count, parent_rng)) {
        req.parents.push_back(p->spec);
        req.parent_fitness.push_back(p->fitness.phi);
      }
    }
    requests.push_back(std::move(req));
    ids.push_back(offspring_id(t, k));
  }

  std::vector<Candidate> candidates = produce(requests, ids);
  double reward = 0.0;
  std::vector<Member> pool = state.population.members;
  for (Candidate& c : candidates) {
    reward += c.member.fitness.phi;
    state.prompt_tokens += c.response.usage.prompt;
    state.completion_tokens += c.response.usage.completion;
    if (c.member.fitness.failed) {
      ++state.failures;
      continue;
    }
    update_best(state, c.member);
    pool.push_back(std::move(c.member));
  }
  reward /= static_cast<double>(candidates.size());

  state.population.members = select_top_n(std::move(pool), e.population);
  state.population.generation = t;
  state.generation = t;
  const GenerationStats stats = population_stats(state.population);
  state.history.push_back(stats);
  state.recent.insert(state.recent.begin(), action.transformation);
  if (state.recent.size() > kHistoryLength) state.recent.resize(kHistoryLength);

  const PolicyState s_next = featurize(state.population.fitness(), state.recent, t, e.t_max);
  Transition tr;
  tr.state = features;
  tr.action = action_index_value;
  tr.reward = reward;
  tr.log_prob = log_prob;
  tr.value = value_now;
  tr.next_value = state.controller.value(s_next.features());
  tr.terminal = finished(state);
  state.buffer.push_back(std::move(tr));
  if ((e.update_interval > 0 && state.buffer.size() >= e.update_interval) ||
      state.buffer.back().terminal) {
    state.controller.update(state.buffer);
  }

  state.log.push_back(LogRecord{t, action_label(action), reward, stats.mean, stats.variance,
                                state.best_ever.fitness.phi, state.best_ever.spec.id});
  return state;
}

RunState Orchestrator::resume(RunState state) {
  while (!finished(state)) {
    state = step(std::move(state));
    if (on_generation) on_generation(state);
  }
  return state;
}

RunState Orchestrator::run() { return resume(initialize()); }

ComparisonReport compare(const AttackSpec& best, const TaskContext& task, CleanRunCache& cache) {
  const auto clean = cache.get(task);
  ComparisonReport out;
  out.clean = clean->report;
  auto add = [&](const std::string& name, const Poisoner& poisoner) {
    ComparisonRow row;
    row.name = name;
    row.report = run_protocol(*task.split, *task.dataset, poisoner, task.seed, task.fscil, &clean->base);
    row.drop = attack_drop(out.clean, row.report);
    out.rows.push_back(std::move(row));
  };
  add("g*", interpret(best));
  for (const char* name : {"fgsm", "pgd", "cw", "deepfool"}) add(name, baseline_poisoner(name));
  return out;
}

NaiveResult run_naive(const EvolutionSetup& setup, CleanRunCache& cache) {
  NaiveResult out;
  out.response = setup.generator.naive_uses_llm
                     ? naive_generate(setup.generator.endpoint, setup.seed)
                     : naive_generate_mock(derive_seed(setup.seed, {0, 0, tag("generate")}),
                                           setup.generator.mock);
  if (!out.response.ok()) {
    out.member.spec.id = "naive";
    out.member.fitness = penalty_report(setup.eval, std::string(status_name(out.response.status)) +
                                                        ": " + out.response.error);
    return out;
  }
  out.member.spec = out.response.spec;
  out.member.spec.id = "naive";
  out.member.fitness = evaluate(out.member.spec, setup.task, setup.eval, cache);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

ordered_json to_json(const SessionReport& r) {
  return {{"acc", r.acc}, {"base_acc", r.base_acc}, {"new_acc", r.new_acc}, {"avg", r.avg}};
}

SessionReport session_from(const ordered_json& j) {
  SessionReport r;
  r.acc = j.at("acc").get<std::vector<double>>();
  r.base_acc = j.at("base_acc").get<std::vector<double>>();
  r.new_acc = j.at("new_acc").get<std::vector<double>>();
  r.avg = j.at("avg").get<double>();
  return r;
}

ordered_json to_json(const Member& m) {
  const FitnessReport& f = m.fitness;
  return {{"spec", ordered_json::parse(serialize(m.spec))},
          {"fitness",
           {{"j_succ", f.j_succ},
            {"j_cost", f.j_cost},
            {"phi", f.phi},
            {"failed", f.failed},
            {"error", f.error},
            {"grad_evals", f.cost.grad_evals},
            {"poison_calls", f.cost.poison_calls},
            {"grad_ratio", f.cost.grad_ratio},
            {"epsilon_ratio", f.cost.epsilon_ratio},
            {"session", to_json(f.session)}}}};
}

Member member_from(const ordered_json& j) {
  Member m;
  m.spec = parse(j.at("spec").dump());
  const ordered_json& f = j.at("fitness");
  m.fitness.j_succ = f.at("j_succ").get<double>();
  m.fitness.j_cost = f.at("j_cost").get<double>();
  m.fitness.phi = f.at("phi").get<double>();
  m.fitness.failed = f.at("failed").get<bool>();
  m.fitness.error = f.at("error").get<std::string>();
  m.fitness.cost.grad_evals = f.at("grad_evals").get<std::size_t>();
  m.fitness.cost.poison_calls = f.at("poison_calls").get<std::size_t>();
  m.fitness.cost.grad_ratio = f.at("grad_ratio").get<double>();
  m.fitness.cost.epsilon_ratio = f.at("epsilon_ratio").get<double>();
  m.fitness.session = session_from(f.at("session"));
  return m;
}

ordered_json to_json(const MlpModel& model) {
  ordered_json params = ordered_json::array();
  for (const Tensor& t : model.parameters()) {
    params.push_back(std::vector<double>(t.values().begin(), t.values().end()));
  }
  return {{"widths", model.widths()}, {"parameters", params}};
}

MlpModel model_from(const ordered_json& j) {
  MlpModel model(j.at("widths").get<std::vector<std::size_t>>());
  const ordered_json& params = j.at("parameters");
  if (params.size() != model.parameters().size()) throw std::runtime_error("checkpoint: parameter count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto values = params[i].get<std::vector<double>>();
    Tensor& t = model.parameters()[i];
    if (values.size() != t.size()) throw std::runtime_error("checkpoint: parameter shape");
    std::copy(values.begin(), values.end(), t.values().begin());
  }
  return model;
}

ordered_json to_json(const GenerationStats& s) {
  return {{"mean", s.mean}, {"variance", s.variance}, {"best", s.best}};
}

GenerationStats stats_from(const ordered_json& j) {
  return {j.at("mean").get<double>(), j.at("variance").get<double>(), j.at("best").get<double>()};
}

ordered_json to_json(const LogRecord& r) {
  return {{"t", r.t},           {"action", r.action},         {"reward", r.reward},
          {"mu_phi", r.mu_phi}, {"sigma2_phi", r.sigma2_phi}, {"best_phi", r.best_phi},
          {"best_id", r.best_id}};
}

LogRecord record_from(const ordered_json& j) {
  LogRecord r;
  r.t = j.at("t").get<std::size_t>();
  r.action = j.at("action").get<std::string>();
  r.reward = j.at("reward").get<double>();
  r.mu_phi = j.at("mu_phi").get<double>();
  r.sigma2_phi = j.at("sigma2_phi").get<double>();
  r.best_phi = j.at("best_phi").get<double>();
  r.best_id = j.at("best_id").get<std::string>();
  return r;
}

}  // namespace

std::string checkpoint_to_string(const RunState& state) {
  const ControllerConfig& cc = state.controller.config();
  ordered_json j;
  j["version"] = kCheckpointVersion;
  j["seed"] = state.seed;
  j["generation"] = state.generation;
  j["capacity"] = state.population.capacity;
  ordered_json members = ordered_json::array();
  for (const Member& m : state.population.members) members.push_back(to_json(m));
  j["population"] = members;
  j["best_ever"] = to_json(state.best_ever);
  j["controller"] = {{"config",
                      {{"eps_clip", cc.eps_clip},
                       {"gamma", cc.gamma},
                       {"lr", cc.lr},
                       {"value_lr", cc.value_lr},
                       {"epochs", cc.epochs},
                       {"entropy_coef", cc.entropy_coef},
                       {"hidden", cc.hidden}}},
                     {"policy", to_json(state.controller.policy())},
                     {"value", to_json(state.controller.value_model())}};
  ordered_json buffer = ordered_json::array();
  for (const Transition& t : state.buffer) {
    buffer.push_back({{"state", t.state},
                      {"action", t.action},
                      {"reward", t.reward},
                      {"log_prob", t.log_prob},
                      {"value", t.value},
                      {"next_value", t.next_value},
                      {"terminal", t.terminal}});
  }
  j["buffer"] = buffer;
  j["initial"] = to_json(state.initial);
  ordered_json history = ordered_json::array();
  for (const GenerationStats& s : state.history) history.push_back(to_json(s));
  j["history"] = history;
  ordered_json recent = ordered_json::array();
  for (Transformation t : state.recent) recent.push_back(std::string(transformation_name(t)));
  j["recent"] = recent;
  ordered_json log = ordered_json::array();
  for (const LogRecord& r : state.log) log.push_back(to_json(r));
  j["log"] = log;
  j["prompt_tokens"] = state.prompt_tokens;
  j["completion_tokens"] = state.completion_tokens;
  j["failures"] = state.failures;
  return j.dump(1);
}

RunState checkpoint_from_string(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw std::runtime_error("unsupported checkpoint version");
    }
    RunState s;
    s.seed = j.at("seed").get<std::uint64_t>();
    s.generation = j.at("generation").get<std::size_t>();
    s.population.capacity = j.at("capacity").get<std::size_t>();
    s.population.generation = s.generation;
    for (const auto& m : j.at("population")) s.population.members.push_back(member_from(m));
    s.best_ever = member_from(j.at("best_ever"));

    const ordered_json& c = j.at("controller");
    const ordered_json& cfg = c.at("config");
    ControllerConfig cc;
    cc.eps_clip = cfg.at("eps_clip").get<double>();
    cc.gamma = cfg.at("gamma").get<double>();
    cc.lr = cfg.at("lr").get<double>();
    cc.value_lr = cfg.at("value_lr").get<double>();
    cc.epochs = cfg.at("epochs").get<int>();
    cc.entropy_coef = cfg.at("entropy_coef").get<double>();
    cc.hidden = cfg.at("hidden").get<std::size_t>();
    MlpModel policy = model_from(c.at("policy"));
    MlpModel value = model_from(c.at("value"));
    s.controller = Controller(policy.input_dim(), policy.num_classes(), cc, 0);
    s.controller.policy() = std::move(policy);
    s.controller.value_model() = std::move(value);

    for (const auto& t : j.at("buffer")) {
      Transition tr;
      tr.state = t.at("state").get<std::vector<double>>();
      tr.action = t.at("action").get<std::size_t>();
      tr.reward = t.at("reward").get<double>();
      tr.log_prob = t.at("log_prob").get<double>();
      tr.value = t.at("value").get<double>();
      tr.next_value = t.at("next_value").get<double>();
      tr.terminal = t.at("terminal").get<bool>();
      s.buffer.push_back(std::move(tr));
    }
    s.initial = stats_from(j.at("initial"));
    for (const auto& h : j.at("history")) s.history.push_back(stats_from(h));
    for (const auto& r : j.at("recent")) {
      const std::string name = r.get<std::string>();
      if (name == "genesis") s.recent.push_back(Transformation::genesis);
      else if (name == "refine") s.recent.push_back(Transformation::refine);
      else if (name == "synth") s.recent.push_back(Transformation::synth);
      else throw std::runtime_error("unknown transformation '" + name + "'");
    }
    for (const auto& r : j.at("log")) s.log.push_back(record_from(r));
    s.prompt_tokens = j.at("prompt_tokens").get<std::int64_t>();
    s.completion_tokens = j.at("completion_tokens").get<std::int64_t>();
    s.failures = j.at("failures").get<std::size_t>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("checkpoint: ") + e.what());
  } catch (const SpecError& e) {
    throw std::runtime_error(std::string("checkpoint spec: ") + e.what());
  }
}

void save_checkpoint(const RunState& state, const std::filesystem::path& path) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << checkpoint_to_string(state);
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

RunState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return checkpoint_from_string(text.str());
}

std::string log_line(const LogRecord& record) { return to_json(record).dump(); }

LogRecord parse_log_line(const std::string& line) {
  try {
    return record_from(ordered_json::parse(line));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("bad log record: ") + e.what());
  }
}

}  // namespace acraft
