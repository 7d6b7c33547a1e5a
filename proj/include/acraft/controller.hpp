#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "acraft/generator.hpp"
#include "acraft/mlp.hpp"
#include "acraft/rng.hpp"

namespace acraft {

enum class ParentSelector { best, proportional, random };

std::string_view selector_name(ParentSelector s);

struct EvolutionAction {
  Transformation transformation = Transformation::genesis;
  ParentSelector selector = ParentSelector::random;  // always random for genesis
  std::size_t instruction = 0;

  friend bool operator==(const EvolutionAction&, const EvolutionAction&) = default;
};

/// Genesis x 4 instructions, then refine/synth x 3 selectors x 4 instructions.
inline constexpr std::size_t kActionCount = 4 + 2 * 3 * kInstructionCount;

EvolutionAction action_from_index(std::size_t index);
/// Canonical index; genesis actions map regardless of their selector.
std::size_t action_index(const EvolutionAction& action);
std::string action_label(const EvolutionAction& action);

inline constexpr std::size_t kHistoryLength = 3;
/// mean, variance, best, progress, then one-hot transformations of the last
/// three actions (most recent first).
inline constexpr std::size_t kStateDim = 4 + 3 * kHistoryLength;

struct PolicyState {
  double mean = 0.0;
  double variance = 0.0;  // population variance
  double best = 0.0;
  double progress = 0.0;  // generation / T_max, in [0, 1]
  std::vector<Transformation> history;  // most recent first, at most kHistoryLength

  std::vector<double> features() const;
};

/// Throws std::invalid_argument on an empty fitness set.
PolicyState featurize(std::span<const double> fitness, std::span<const Transformation> recent,
                      std::size_t generation, std::size_t t_max);

struct ControllerConfig {
  double eps_clip = 0.2;
  double gamma = 0.9;
  double lr = 0.01;
  double value_lr = 0.01;
  int epochs = 4;
  double entropy_coef = 0.01;
  std::size_t hidden = 32;

  friend bool operator==(const ControllerConfig&, const ControllerConfig&) = default;
};

struct Transition {
  std::vector<double> state;  // raw features
  std::size_t action = 0;
  double reward = 0.0;
  double log_prob = 0.0;    // under the acting policy
  double value = 0.0;       // V(s_t) at acting time
  double next_value = 0.0;  // V(s_{t+1}); ignored when terminal
  bool terminal = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

double policy_ratio(double new_log_prob, double old_log_prob);
double clipped_objective(double ratio, double advantage, double eps_clip);

/// One-step TD advantages r + gamma * V(s') - V(s), standardized when there
/// are at least two (all zero when their spread vanishes).
std::vector<double> advantages(std::span<const Transition> buffer, double gamma);
/// Same, before standardization.
std::vector<double> raw_advantages(std::span<const Transition> buffer, double gamma);

/// Inputs are squashed with sign(v) * log1p(|v|) before either network.
std::vector<double> squash_features(std::span<const double> features);

struct UpdateStats {
  bool applied = false;
  double policy_objective = 0.0;  // mean clipped objective, last epoch
  double value_loss = 0.0;
};

class Controller {
 public:
  Controller() = default;
  Controller(std::size_t state_dim, std::size_t action_count, const ControllerConfig& config,
             std::uint64_t seed);

  std::vector<double> probabilities(std::span<const double> state) const;
  double value(std::span<const double> state) const;
  /// Categorical draw from the policy; returns (action, log-prob).
  std::pair<std::size_t, double> sample(std::span<const double> state, Rng& rng) const;

  /// Clipped-surrogate policy update plus value regression, `epochs` full
  /// batch steps. Clears the buffer. Non-finite gradients skip the update.
  UpdateStats update(std::vector<Transition>& buffer);

  const MlpModel& policy() const { return policy_; }
  const MlpModel& value_model() const { return value_; }
  MlpModel& policy() { return policy_; }
  MlpModel& value_model() { return value_; }
  const ControllerConfig& config() const { return config_; }
  std::size_t state_dim() const { return policy_.input_dim(); }
  std::size_t action_count() const { return policy_.num_classes(); }

  friend bool operator==(const Controller&, const Controller&) = default;

 private:
  MlpModel policy_;
  MlpModel value_;
  ControllerConfig config_;
};

/// Convenience: the distribution and a sampled EvolutionAction.
std::pair<EvolutionAction, double> sample_action(const Controller& controller,
                                                 const PolicyState& state, Rng& rng);

}  // namespace acraft
