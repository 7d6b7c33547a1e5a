#include "acraft/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "acraft/rng.hpp"

namespace acraft {

namespace {

const MlpModel& model_of(const ModelView& view) {
  if (view.model == nullptr) throw std::invalid_argument("attack needs a model");
  return *view.model;
}

void count_gradient(const ModelView& view, std::size_t n = 1) {
  if (view.grad_evals != nullptr) *view.grad_evals += n;
}

void check_batch(const Tensor& x, std::span<const int> labels, const ModelView& view) {
  const MlpModel& model = model_of(view);
  if (x.rank() != 2 || x.cols() != model.input_dim()) {
    throw ShapeError("attack input " + shape_string(x.shape()) + " does not match model");
  }
  if (labels.size() != x.rows()) throw ShapeError("attack label count differs from batch");
}

void check_budget(const PerturbationBudget& budget) {
  if (!(budget.epsilon >= 0.0) || !std::isfinite(budget.epsilon)) {
    throw std::invalid_argument("epsilon must be finite and non-negative");
  }
  if (!(budget.alpha_step >= 0.0) || !std::isfinite(budget.alpha_step)) {
    throw std::invalid_argument("alpha_step must be finite and non-negative");
  }
  if (budget.iterations < 0) throw std::invalid_argument("iterations must be non-negative");
}

int argmax_row(std::span<const double> row) {
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor project(const Tensor& candidate, const Tensor& origin, double epsilon) {
  require_same_shape(candidate, origin, "project");
  Tensor out = candidate;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double lo = origin[i] - epsilon;
    const double hi = origin[i] + epsilon;
    out[i] = std::clamp(std::clamp(out[i], lo, hi), 0.0, 1.0);
  }
  return out;
}

namespace {

Tensor random_start_point(const Tensor& x, double epsilon, std::uint64_t seed) {
  Rng rng(seed);
  Tensor start = x;
  for (double& v : start.values()) v += rng.uniform(-epsilon, epsilon);
  return project(start, x, epsilon);
}

}  // namespace

CombinedLoss combined_loss(const Tensor& x, std::span<const int> labels, const ModelView& view,
                           const LossCombination& loss) {
  check_batch(x, labels, view);
  GradientReport report = grad_input(model_of(view), x, labels, loss, view.prototypes);
  count_gradient(view);
  return CombinedLoss{report.loss, std::move(report.input_grad)};
}

Tensor fgsm(const Tensor& x, std::span<const int> labels, const ModelView& view, double epsilon) {
  check_batch(x, labels, view);
  const GradientReport g =
      grad_input(model_of(view), x, labels, LossCombination{1.0, 0.0, 0.0}, view.prototypes);
  count_gradient(view);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(x[i] + epsilon * sign_of(g.input_grad[i]), 0.0, 1.0);
  }
  return out;
}

Tensor single_step(const Tensor& x, std::span<const int> labels, const ModelView& view,
                   double epsilon, const LossCombination& loss, int direction) {
  const CombinedLoss g = combined_loss(x, labels, view, loss);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = x[i] + direction * epsilon * sign_of(g.input_grad[i]);
  }
  return project(out, x, epsilon);
}

Tensor pgd(const Tensor& x, std::span<const int> labels, const ModelView& view,
           const PerturbationBudget& budget, const SignStepOptions& options) {
  check_batch(x, labels, view);
  check_budget(budget);
  Tensor current = x;
  if (options.random_start) current = random_start_point(x, budget.epsilon, options.seed);
  for (int t = 0; t < budget.iterations; ++t) {
    const CombinedLoss g = combined_loss(current, labels, view, options.loss);
    for (std::size_t i = 0; i < current.size(); ++i) {
      current[i] += options.direction * budget.alpha_step * sign_of(g.input_grad[i]);
    }
    if (options.project_each_step) current = project(current, x, budget.epsilon);
  }
  return project(current, x, budget.epsilon);
}

Tensor carlini_wagner(const Tensor& x, std::span<const int> labels, const ModelView& view,
                      const CwParams& params) {
  check_batch(x, labels, view);
  const MlpModel& model = model_of(view);
  constexpr double kNudge = 1e-6;
  // |w| <= 15 keeps 0.5 * (tanh(w) + 1) strictly inside (0, 1) in binary64.
  constexpr double kLatentLimit = 15.0;

  const std::size_t batch = x.rows();
  const std::size_t d = x.cols();
  Tensor w = x;
  for (double& v : w.values()) v = std::atanh(2.0 * std::clamp(v, kNudge, 1.0 - kNudge) - 1.0);

  Tensor best(x.shape());
  std::vector<double> best_dist(batch, std::numeric_limits<double>::infinity());

  auto to_image = [](const Tensor& latent) {
    Tensor z = latent;
    for (double& v : z.values()) v = 0.5 * (std::tanh(v) + 1.0);
    return z;
  };

  Tensor z = to_image(w);
  for (int step = 0;; ++step) {
    const ForwardTrace trace = trace_forward(model, z, view.prototypes);
    const std::size_t classes = trace.scores.cols();
    Tensor dscores = Tensor::matrix(batch, classes);
    double objective = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      auto s = trace.scores.row(b);
      const int y = labels[b];
      int other = -1;
      for (std::size_t j = 0; j < classes; ++j) {
        if (static_cast<int>(j) == y) continue;
        if (other < 0 || s[j] > s[other]) other = static_cast<int>(j);
      }
      double dist = 0.0;
      for (std::size_t k = 0; k < d; ++k) dist += (z(b, k) - x(b, k)) * (z(b, k) - x(b, k));
      if (argmax_row(s) != y && dist < best_dist[b]) {
        best_dist[b] = dist;
        std::copy(z.row(b).begin(), z.row(b).end(), best.row(b).begin());
      }
      const double margin = other < 0 ? 0.0 : s[y] - s[other] + params.confidence;
      objective += dist + params.c * std::max(margin, 0.0);
      if (margin > 0.0 && params.c != 0.0) {
        dscores(b, y) += params.c;
        dscores(b, other) -= params.c;
      }
    }
    if (!std::isfinite(objective)) throw std::domain_error("C&W objective is not finite");
    if (step == params.steps) break;

    const GradientReport g =
        backpropagate(model, trace, dscores, nullptr, view.prototypes, false);
    count_gradient(view);
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double t = std::tanh(w[i]);
      const double dz_dw = 0.5 * (1.0 - t * t);
      const double grad = (2.0 * (z[i] - x[i]) + g.input_grad[i]) * dz_dw;
      w[i] = std::clamp(w[i] - params.lr * grad, -kLatentLimit, kLatentLimit);
    }
    z = to_image(w);
  }

  for (std::size_t b = 0; b < batch; ++b) {
    if (std::isinf(best_dist[b])) std::copy(z.row(b).begin(), z.row(b).end(), best.row(b).begin());
  }
  return best;
}

DeepFoolResult deepfool(const Tensor& x, std::span<const int> labels, const ModelView& view,
                        const DeepFoolParams& params) {
  check_batch(x, labels, view);
  const MlpModel& model = model_of(view);
  const std::size_t d = x.cols();
  constexpr double kDegenerate = 1e-12;
  Rng jitter(params.seed);

  DeepFoolResult result{x, std::vector<int>(x.rows(), 0)};
  for (std::size_t b = 0; b < x.rows(); ++b) {
    const std::vector<double> origin(x.row(b).begin(), x.row(b).end());
    const int k = labels[b];
    std::vector<double> r_total(d, 0.0);
    Tensor current({1, d}, origin);
    int iter = 0;
    while (iter < params.max_iter) {
      const ForwardTrace trace = trace_forward(model, current, view.prototypes);
      const std::size_t classes = trace.scores.cols();
      auto s = trace.scores.row(0);
      if (argmax_row(s) != k) break;

      double best_ratio = std::numeric_limits<double>::infinity();
      double best_gap = 0.0;
      std::vector<double> best_dir;
      for (std::size_t j = 0; j < classes; ++j) {
        if (static_cast<int>(j) == k) continue;
        Tensor dscores = Tensor::matrix(1, classes);
        dscores(0, j) = 1.0;
        dscores(0, k) = -1.0;
        const GradientReport g =
            backpropagate(model, trace, dscores, nullptr, view.prototypes, false);
        count_gradient(view);
        double norm2 = 0.0;
        for (double v : g.input_grad.values()) norm2 += v * v;
        const double norm = std::sqrt(norm2);
        if (norm < kDegenerate) continue;
        const double gap = std::abs(s[j] - s[k]);
        const double ratio = gap / norm;
        if (ratio < best_ratio) {
          best_ratio = ratio;
          best_gap = gap;
          best_dir.assign(g.input_grad.values().begin(), g.input_grad.values().end());
        }
      }
      ++iter;
      if (best_dir.empty()) {
        // Every competing plane is degenerate: nudge and retry.
        for (std::size_t i = 0; i < d; ++i) current[i] += 1e-6 * jitter.uniform(-1.0, 1.0);
        continue;
      }
      double norm2 = 0.0;
      for (double v : best_dir) norm2 += v * v;
      for (std::size_t i = 0; i < d; ++i) r_total[i] += best_gap / norm2 * best_dir[i];
      for (std::size_t i = 0; i < d; ++i) {
        current[i] = origin[i] + (1.0 + params.overshoot) * r_total[i];
      }
    }
    result.iterations[b] = iter;
    auto out = result.x_adv.row(b);
    for (std::size_t i = 0; i < d; ++i) {
      out[i] = std::clamp(origin[i] + (1.0 + params.overshoot) * r_total[i], 0.0, 1.0);
    }
  }
  return result;
}

Tensor acraft_attack(const Tensor& x, std::span<const int> labels, const ModelView& view,
                     const AcraftParams& params) {
  check_batch(x, labels, view);
  check_budget(params.budget);
  if (!(params.mu >= 0.0 && params.mu <= 1.0)) throw std::invalid_argument("mu must be in [0, 1]");
  if (params.lambda_rev == 0.0 || !std::isfinite(params.lambda_rev)) {
    throw std::invalid_argument("lambda_rev must be finite and nonzero");
  }
  const double alpha = params.budget.alpha_step;
  Tensor momentum(x.shape());
  Tensor current = x;
  if (params.random_start) current = random_start_point(x, params.budget.epsilon, params.seed);
  for (int t = 0; t < params.budget.iterations; ++t) {
    const CombinedLoss g = combined_loss(current, labels, view, params.loss);
    for (std::size_t i = 0; i < current.size(); ++i) {
      const double direction =
          params.mu * momentum[i] + (1.0 - params.mu) * params.lambda_rev * g.input_grad[i];
      momentum[i] = direction;
      current[i] -= alpha * sign_of(direction);
    }
    if (params.per_step_projection) current = project(current, x, params.budget.epsilon);
  }
  return project(current, x, params.budget.epsilon);
}

}  // namespace acraft
