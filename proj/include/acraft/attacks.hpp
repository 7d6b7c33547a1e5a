#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "acraft/mlp.hpp"
#include "acraft/tensor.hpp"

namespace acraft {

/// l-infinity budget shared by the gradient-sign attacks.
struct PerturbationBudget {
  double epsilon = 0.1;
  double alpha_step = 0.025;
  int iterations = 10;

  friend bool operator==(const PerturbationBudget&, const PerturbationBudget&) = default;
};

struct CombinedLoss {
  double value = 0.0;
  Tensor input_grad;
};

/// Value and input gradient of
///   w_ce_true * CE(y) - w_ce_runnerup * CE(y2) + w_proto * ||emb(x) - p_y||^2
/// with y2 the most probable non-true class at x. Counts one gradient evaluation.
CombinedLoss combined_loss(const Tensor& x, std::span<const int> labels, const ModelView& view,
                           const LossCombination& loss);

/// sign() with sign(0) = 0.
double sign_of(double v);

/// Clip to [x - eps, x + eps], then to [0, 1].
Tensor project(const Tensor& candidate, const Tensor& origin, double epsilon);

Tensor fgsm(const Tensor& x, std::span<const int> labels, const ModelView& view, double epsilon);

struct SignStepOptions {
  LossCombination loss{};
  int direction = +1;              // +1 ascends the loss, -1 descends
  bool project_each_step = true;   // false: single projection after the last step
  bool random_start = false;
  std::uint64_t seed = 0;
};

/// Projected sign-gradient iteration. With the default options this is
/// untargeted PGD on the true-class cross-entropy.
Tensor pgd(const Tensor& x, std::span<const int> labels, const ModelView& view,
           const PerturbationBudget& budget, const SignStepOptions& options = {});

/// One eps-sized sign step along `direction` of the combined loss gradient.
Tensor single_step(const Tensor& x, std::span<const int> labels, const ModelView& view,
                   double epsilon, const LossCombination& loss, int direction);

struct CwParams {
  double c = 1.0;
  int steps = 100;
  double lr = 0.01;
  double confidence = 0.0;
};

/// Untargeted Carlini-Wagner in tanh space with plain gradient descent.
/// Returns, per sample, the closest misclassified iterate, or the final one.
Tensor carlini_wagner(const Tensor& x, std::span<const int> labels, const ModelView& view,
                      const CwParams& params);

struct DeepFoolParams {
  int max_iter = 50;
  double overshoot = 0.02;
  std::uint64_t seed = 0;  // jitter for degenerate gradient differences
};

struct DeepFoolResult {
  Tensor x_adv;
  std::vector<int> iterations;  // per sample
};

DeepFoolResult deepfool(const Tensor& x, std::span<const int> labels, const ModelView& view,
                        const DeepFoolParams& params);

struct AcraftParams {
  PerturbationBudget budget{};
  double mu = 0.5;
  double lambda_rev = -1.0;
  LossCombination loss{};
  bool per_step_projection = false;
  bool random_start = false;  // uniform start in the eps-ball
  std::uint64_t seed = 0;
};

/// Momentum sign iteration with a reversal coefficient:
///   d_t = mu * m_t + (1 - mu) * lambda_rev * grad L_comb(x_t),  m_{t+1} = d_t
///   x_{t+1} = x_t - alpha * sign(d_t),  m_0 = 0
/// followed by the eps-ball clip and the unit-box clip.
Tensor acraft_attack(const Tensor& x, std::span<const int> labels, const ModelView& view,
                     const AcraftParams& params);

}  // namespace acraft
