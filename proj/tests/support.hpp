#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <thread>
#include <vector>

#include "acraft/config.hpp"
#include "acraft/controller.hpp"
#include "acraft/rng.hpp"
#include "httplib.h"
#include "json.hpp"

namespace testing {

using namespace acraft;

inline Tensor random_input(Rng& rng, std::size_t rows, std::size_t cols, double lo = 0.0,
                           double hi = 1.0) {
  Tensor x = Tensor::matrix(rows, cols);
  for (double& v : x.values()) v = rng.uniform(lo, hi);
  return x;
}

inline std::vector<int> random_labels(Rng& rng, std::size_t n, std::size_t classes) {
  std::vector<int> y(n);
  for (int& v : y) v = static_cast<int>(rng.below(classes));
  return y;
}

inline std::vector<int> argmax_rows(const Tensor& p) {
  std::vector<int> out;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    const auto row = p.row(r);
    out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
  }
  return out;
}

/// Single linear layer mapping d inputs to 2 logits (w, -w)/2 so the logit
/// difference is w.x + b.
inline MlpModel binary_linear(const std::vector<double>& w, double b) {
  MlpModel m({w.size(), 2});
  Tensor& W = m.parameters()[0];
  Tensor& bias = m.parameters()[1];
  for (std::size_t j = 0; j < w.size(); ++j) {
    W(0, j) = w[j] / 2;
    W(1, j) = -w[j] / 2;
  }
  bias[0] = b / 2;
  bias[1] = -b / 2;
  return m;
}

/// A smaller protocol than the desk default, for fast end-to-end tests.
inline RunConfig small_config(std::uint64_t seed = 3) {
  RunConfig cfg;
  cfg.seed = seed;
  cfg.dataset.classes = 14;
  cfg.dataset.per_class = 30;
  cfg.dataset.dim = 12;
  cfg.split.base_classes = 8;
  cfg.split.sessions = 2;
  cfg.split.ways = 3;
  cfg.split.shots = 3;
  cfg.split.test_per_class = 15;
  cfg.fscil.hidden = {24, 16};
  cfg.fscil.epochs = 12;
  cfg.evolution.population = 4;
  cfg.evolution.t_max = 4;
  cfg.evolution.offspring = 3;
  cfg.evolution.workers = 3;
  return cfg;
}

/// Genesis-drawn spec with awkward rationale text and unusual numbers mixed in.
inline AttackSpec random_spec(Rng& rng) {
  AttackSpec s = sample_genesis(rng.next_u64(), 1)[0];
  s.id = "s" + std::to_string(rng.below(1000000));
  const char* texts[] = {"", "plain", "quotes \" and \\ backslash", "line\nbreak", "unicode \u00e9\u4e2d"};
  s.rationale = texts[rng.below(5)];
  if (rng.bernoulli(0.3)) s.budget.epsilon = rng.uniform(1e-9, 1.0);
  if (rng.bernoulli(0.3)) s.mu = rng.uniform();
  return s;
}

inline SessionReport random_report(Rng& rng) {
  SessionReport r;
  const std::size_t n = 1 + rng.below(4);
  for (std::size_t i = 0; i < n; ++i) {
    r.acc.push_back(rng.uniform(0, 100));
    r.base_acc.push_back(rng.uniform(0, 100));
    r.new_acc.push_back(rng.uniform(0, 100));
  }
  r.avg = rng.uniform(0, 100);
  return r;
}

inline Member random_member(Rng& rng) {
  Member m;
  m.spec = sample_genesis(rng.next_u64(), 1).front();
  m.spec.rationale = rng.bernoulli(0.5) ? "" : "why \"quoted\"\n";
  m.fitness.j_succ = rng.uniform(-10, 60);
  m.fitness.j_cost = rng.uniform();
  m.fitness.phi = rng.normal() * 1e3;
  m.fitness.session = random_report(rng);
  m.fitness.failed = rng.bernoulli(0.1);
  m.fitness.error = m.fitness.failed ? "bad" : "";
  m.fitness.cost = {rng.below(500), rng.below(5), rng.uniform(), rng.uniform()};
  return m;
}

inline RunState random_state(Rng& rng) {
  RunState s;
  s.seed = rng.next_u64();
  s.generation = rng.below(20);
  for (std::size_t k = 0, n = 1 + rng.below(5); k < n; ++k) s.population.members.push_back(random_member(rng));
  s.population.capacity = 1 + rng.below(10);
  s.population.generation = s.generation;
  ControllerConfig cc;
  cc.hidden = 1 + rng.below(6);
  cc.lr = rng.uniform(1e-4, 0.1);
  s.controller = Controller(kStateDim, kActionCount, cc, rng.next_u64());
  for (double& v : s.controller.policy().parameters().back().values()) v = rng.normal();
  s.initial = {rng.normal(), rng.uniform(), rng.normal()};
  for (std::size_t k = 0, n = rng.below(6); k < n; ++k) s.history.push_back({rng.normal(), rng.uniform(), rng.normal()});
  for (std::size_t k = 0, n = rng.below(4); k < n; ++k) s.recent.push_back(static_cast<Transformation>(rng.below(3)));
  for (std::size_t k = 0, n = rng.below(3); k < n; ++k) {
    Transition t;
    t.state.resize(kStateDim);
    for (double& v : t.state) v = rng.normal();
    t.action = rng.below(kActionCount);
    t.reward = rng.normal();
    t.log_prob = -rng.uniform(0, 5);
    t.value = rng.normal();
    t.next_value = rng.normal();
    t.terminal = rng.bernoulli(0.5);
    s.buffer.push_back(t);
  }
  s.best_ever = random_member(rng);
  for (std::size_t k = 0, n = rng.below(4); k < n; ++k) {
    s.log.push_back({k + 1, "refine/best/i" + std::to_string(k), rng.normal(), rng.normal(), rng.uniform(),
                     rng.normal(), "g" + std::to_string(k)});
  }
  s.prompt_tokens = static_cast<std::int64_t>(rng.below(100000));
  s.completion_tokens = static_cast<std::int64_t>(rng.below(100000));
  s.failures = rng.below(9);
  return s;
}

// Three arms paying 1.0, 0.5 and 0.0 plus N(0, 0.05) noise; batches of eight pulls.
inline double bandit_arm0(std::uint64_t seed) {
  ControllerConfig cfg;
  cfg.lr = 0.05;
  Controller c(2, 3, cfg, seed);
  Rng rng(derive_seed(seed, {7}));
  const std::vector<double> s{1.0, 0.0};
  const double pay[] = {1.0, 0.5, 0.0};
  for (int u = 0; u < 200; ++u) {
    std::vector<Transition> buffer;
    for (int k = 0; k < 8; ++k) {
      const auto [a, lp] = c.sample(s, rng);
      Transition t;
      t.state = s;
      t.action = a;
      t.reward = pay[a] + 0.05 * rng.normal();
      t.log_prob = lp;
      t.value = c.value(s);
      t.terminal = true;
      buffer.push_back(std::move(t));
    }
    c.update(buffer);
  }
  return c.probabilities(s)[0];
}

inline std::string chat_body(const std::string& content) {
  nlohmann::json j;
  j["choices"] = nlohmann::json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}});
  j["usage"] = {{"prompt_tokens", 11}, {"completion_tokens", 7}};
  return j.dump();
}

inline std::string fenced(const std::string& rationale, const std::string& doc) {
  return rationale + "\n\n```attackspec\n" + doc + "\n```\n";
}

/// Local chat-completion stub. The handler sees the 1-based call number.
class StubServer {
 public:
  using Handler = std::function<void(int call, const httplib::Request&, httplib::Response&)>;

  explicit StubServer(Handler handler) : handler_(std::move(handler)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++calls_;
      {
        std::lock_guard<std::mutex> lock(mutex_);
        bodies_.push_back(req.body);
      }
      handler_(n, req, res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  EndpointConfig endpoint(double timeout = 2.0) const {
    EndpointConfig e;
    e.base_url = "http://127.0.0.1:" + std::to_string(port_);
    e.timeout_seconds = timeout;
    e.backoff_ms = 10;
    return e;
  }
  int calls() const { return calls_; }
  std::vector<std::string> bodies() const {
    std::lock_guard<std::mutex> lock(mutex_);
    return bodies_;
  }

 private:
  httplib::Server server_;
  Handler handler_;
  std::atomic<int> calls_{0};
  mutable std::mutex mutex_;
  std::vector<std::string> bodies_;
  int port_ = 0;
  std::thread thread_;
};

}  // namespace testing
