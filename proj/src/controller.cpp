#include "acraft/controller.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

namespace acraft {

namespace {

constexpr std::size_t kTransformations = 3;
constexpr std::size_t kSelectors = 3;
constexpr std::size_t kGenesisActions = kInstructionCount;

MlpModel make_network(std::size_t in, std::size_t hidden, std::size_t out, std::uint64_t seed) {
  MlpModel net = MlpModel::initialized({in, hidden, out}, seed);
  // Zero output layer: uniform policy and zero value at the start.
  const std::size_t last = net.layer_count() - 1;
  for (double& v : net.parameters()[2 * last].values()) v = 0.0;
  for (double& v : net.parameters()[2 * last + 1].values()) v = 0.0;
  return net;
}

Tensor stack_states(std::span<const Transition> buffer, std::size_t dim) {
  Tensor x({buffer.size(), dim}, 0.0);
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    if (buffer[i].state.size() != dim) throw std::invalid_argument("transition state has wrong size");
    const std::vector<double> s = squash_features(buffer[i].state);
    std::copy(s.begin(), s.end(), x.row(i).begin());
  }
  return x;
}

bool grads_finite(const GradientReport& g) {
  return std::all_of(g.param_grads.begin(), g.param_grads.end(),
                     [](const Tensor& t) { return t.all_finite(); });
}

}  // namespace

std::string_view selector_name(ParentSelector s) {
  switch (s) {
    case ParentSelector::best: return "best";
    case ParentSelector::proportional: return "proportional";
    case ParentSelector::random: return "random";
  }
  return "unknown";
}

EvolutionAction action_from_index(std::size_t index) {
  if (index >= kActionCount) throw std::out_of_range("action index");
  if (index < kGenesisActions) return {Transformation::genesis, ParentSelector::random, index};
  const std::size_t rest = index - kGenesisActions;
  const std::size_t per_transformation = kSelectors * kInstructionCount;
  return {static_cast<Transformation>(1 + rest / per_transformation),
          static_cast<ParentSelector>((rest % per_transformation) / kInstructionCount),
          rest % kInstructionCount};
}

std::size_t action_index(const EvolutionAction& a) {
  if (a.instruction >= kInstructionCount) throw std::out_of_range("instruction index");
  if (a.transformation == Transformation::genesis) return a.instruction;
  return kGenesisActions +
         (static_cast<std::size_t>(a.transformation) - 1) * kSelectors * kInstructionCount +
         static_cast<std::size_t>(a.selector) * kInstructionCount + a.instruction;
}

std::string action_label(const EvolutionAction& a) {
  std::string out(transformation_name(a.transformation));
  if (a.transformation != Transformation::genesis) out += "/" + std::string(selector_name(a.selector));
  out += "/" + std::string(instruction_name(instruction_from_index(a.instruction)));
  return out;
}

std::vector<double> PolicyState::features() const {
  std::vector<double> f{mean, variance, best, progress};
  f.resize(kStateDim, 0.0);
  for (std::size_t k = 0; k < std::min(history.size(), kHistoryLength); ++k) {
    f[4 + k * kTransformations + static_cast<std::size_t>(history[k])] = 1.0;
  }
  return f;
}

PolicyState featurize(std::span<const double> fitness, std::span<const Transformation> recent,
                      std::size_t generation, std::size_t t_max) {
  if (fitness.empty()) throw std::invalid_argument("cannot featurize an empty population");
  PolicyState s;
  const double n = static_cast<double>(fitness.size());
  s.mean = std::accumulate(fitness.begin(), fitness.end(), 0.0) / n;
  double sq = 0.0;
  for (double f : fitness) sq += (f - s.mean) * (f - s.mean);
  s.variance = sq / n;
  s.best = *std::max_element(fitness.begin(), fitness.end());
  s.progress = t_max == 0 ? 0.0
                          : std::clamp(static_cast<double>(generation) / static_cast<double>(t_max),
                                       0.0, 1.0);
  s.history.assign(recent.begin(), recent.begin() + std::min(recent.size(), kHistoryLength));
  return s;
}

double policy_ratio(double new_log_prob, double old_log_prob) {
  return std::exp(new_log_prob - old_log_prob);
}

double clipped_objective(double ratio, double advantage, double eps_clip) {
  const double clipped = std::clamp(ratio, 1.0 - eps_clip, 1.0 + eps_clip);
  return std::min(ratio * advantage, clipped * advantage);
}

std::vector<double> raw_advantages(std::span<const Transition> buffer, double gamma) {
  std::vector<double> out;
  out.reserve(buffer.size());
  for (const Transition& t : buffer) {
    const double next = t.terminal ? 0.0 : t.next_value;
    out.push_back(t.reward + gamma * next - t.value);
  }
  return out;
}

std::vector<double> advantages(std::span<const Transition> buffer, double gamma) {
  std::vector<double> a = raw_advantages(buffer, gamma);
  if (a.size() < 2) return a;
  const double n = static_cast<double>(a.size());
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double sq = 0.0;
  for (double v : a) sq += (v - mean) * (v - mean);
  const double sd = std::sqrt(sq / n);
  for (double& v : a) v = sd > 1e-12 ? (v - mean) / sd : 0.0;
  return a;
}

std::vector<double> squash_features(std::span<const double> features) {
  std::vector<double> out(features.begin(), features.end());
  for (double& v : out) v = std::copysign(std::log1p(std::abs(v)), v);
  return out;
}

Controller::Controller(std::size_t state_dim, std::size_t action_count,
                       const ControllerConfig& config, std::uint64_t seed)
    : policy_(make_network(state_dim, config.hidden, action_count, derive_seed(seed, {1}))),
      value_(make_network(state_dim, config.hidden, 1, derive_seed(seed, {2}))),
      config_(config) {
  if (state_dim == 0 || action_count == 0) throw std::invalid_argument("empty controller shape");
  if (!(config.eps_clip > 0.0)) throw std::invalid_argument("eps_clip must be positive");
  if (config.epochs < 1) throw std::invalid_argument("epochs must be positive");
}

std::vector<double> Controller::probabilities(std::span<const double> state) const {
  const std::vector<double> s = squash_features(state);
  const Tensor p = forward(policy_, Tensor({1, s.size()}, s));
  return {p.row(0).begin(), p.row(0).end()};
}

double Controller::value(std::span<const double> state) const {
  const std::vector<double> s = squash_features(state);
  return class_scores(value_, Tensor({1, s.size()}, s))(0, 0);
}

std::pair<std::size_t, double> Controller::sample(std::span<const double> state, Rng& rng) const {
  const std::vector<double> p = probabilities(state);
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t chosen = p.size() - 1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) {
      chosen = i;
      break;
    }
  }
  return {chosen, std::log(std::max(p[chosen], kLogFloor))};
}

UpdateStats Controller::update(std::vector<Transition>& buffer) {
  if (buffer.empty()) throw std::invalid_argument("empty transition buffer");
  const std::size_t batch = buffer.size();
  const std::size_t actions = action_count();
  const Tensor x = stack_states(buffer, state_dim());
  const std::vector<double> adv = advantages(buffer, config_.gamma);
  std::vector<double> returns(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    returns[i] = buffer[i].reward + config_.gamma * (buffer[i].terminal ? 0.0 : buffer[i].next_value);
  }

  const MlpModel policy_before = policy_;
  const MlpModel value_before = value_;
  UpdateStats stats;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    const ForwardTrace trace = trace_forward(policy_, x);
    const Tensor probs = softmax_rows(trace.scores);
    Tensor dscores = Tensor::matrix(batch, actions);
    double objective = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      const std::size_t a = buffer[i].action;
      if (a >= actions) throw std::out_of_range("transition action outside the action space");
      const double log_p = std::log(std::max(probs(i, a), kLogFloor));
      const double ratio = policy_ratio(log_p, buffer[i].log_prob);
      objective += clipped_objective(ratio, adv[i], config_.eps_clip);
      const bool clipped = (adv[i] > 0.0 && ratio > 1.0 + config_.eps_clip) ||
                           (adv[i] < 0.0 && ratio < 1.0 - config_.eps_clip);
      const double d_ratio = clipped ? 0.0 : adv[i];
      double entropy = 0.0;
      for (std::size_t j = 0; j < actions; ++j) {
        const double p = probs(i, j);
        entropy -= p * std::log(std::max(p, kLogFloor));
      }
      for (std::size_t j = 0; j < actions; ++j) {
        const double p = probs(i, j);
        const double d_obj = d_ratio * ratio * ((j == a ? 1.0 : 0.0) - p);
        const double d_ent = -p * (std::log(std::max(p, kLogFloor)) + entropy);
        // Ascent on objective + entropy bonus, written as descent.
        dscores(i, j) = -(d_obj + config_.entropy_coef * d_ent) * inv_b;
      }
    }
    const GradientReport pg = backpropagate(policy_, trace, dscores, nullptr, nullptr, true);

    const ForwardTrace vtrace = trace_forward(value_, x);
    Tensor dvalue = Tensor::matrix(batch, 1);
    double value_loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      const double err = vtrace.scores(i, 0) - returns[i];
      value_loss += 0.5 * err * err * inv_b;
      dvalue(i, 0) = err * inv_b;
    }
    const GradientReport vg = backpropagate(value_, vtrace, dvalue, nullptr, nullptr, true);

    if (!grads_finite(pg) || !grads_finite(vg) || !std::isfinite(objective)) {
      std::clog << "warning: non-finite controller gradient, update skipped\n";
      policy_ = policy_before;
      value_ = value_before;
      buffer.clear();
      return {};
    }
    policy_ = sgd_step(std::move(policy_), pg, config_.lr);
    value_ = sgd_step(std::move(value_), vg, config_.value_lr);
    stats.policy_objective = objective * inv_b;
    stats.value_loss = value_loss;
  }
  stats.applied = true;
  buffer.clear();
  return stats;
}

std::pair<EvolutionAction, double> sample_action(const Controller& controller,
                                                 const PolicyState& state, Rng& rng) {
  const auto [index, log_prob] = controller.sample(state.features(), rng);
  return {action_from_index(index), log_prob};
}

}  // namespace acraft
