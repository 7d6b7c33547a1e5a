#include "acraft/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "acraft/rng.hpp"

namespace acraft {

namespace {

// out[b, o] = sum_i a[b, i] * w[o, i] + bias[o]
Tensor affine(const Tensor& a, const Tensor& w, const Tensor& bias) {
  const std::size_t batch = a.rows();
  const std::size_t in = w.cols();
  const std::size_t out = w.rows();
  Tensor z = Tensor::matrix(batch, out);
  for (std::size_t b = 0; b < batch; ++b) {
    auto arow = a.row(b);
    auto zrow = z.row(b);
    for (std::size_t o = 0; o < out; ++o) {
      auto wrow = w.row(o);
      double acc = bias[o];
      for (std::size_t i = 0; i < in; ++i) acc += arow[i] * wrow[i];
      zrow[o] = acc;
    }
  }
  return z;
}

Tensor relu(Tensor z) {
  for (double& v : z.values()) v = v > 0.0 ? v : 0.0;
  return z;
}

void check_input(const MlpModel& model, const Tensor& x) {
  if (model.widths().size() < 2) throw ShapeError("model has no layers");
  if (x.rank() != 2 || x.cols() != model.input_dim()) {
    throw ShapeError("input " + shape_string(x.shape()) + " does not match model input dim " +
                     std::to_string(model.input_dim()));
  }
}

void check_labels(std::span<const int> labels, std::size_t batch, std::size_t classes) {
  if (labels.size() != batch) {
    throw ShapeError("label count " + std::to_string(labels.size()) + " != batch " +
                     std::to_string(batch));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
}

void check_head(const MlpModel& model, const PrototypeHead& head) {
  if (head.centers.rank() != 2 || head.centers.cols() != model.embedding_dim()) {
    throw ShapeError("prototype centers " + shape_string(head.centers.shape()) +
                     " do not match embedding dim " + std::to_string(model.embedding_dim()));
  }
}

double clamped_nll(double p) { return -std::log(std::max(p, kLogFloor)); }

}  // namespace

MlpModel::MlpModel(std::vector<std::size_t> widths) : widths_(std::move(widths)) {
  if (widths_.size() < 2) throw ShapeError("an MLP needs at least input and output widths");
  for (std::size_t w : widths_) {
    if (w == 0) throw ShapeError("layer widths must be positive");
  }
  for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
    params_.push_back(Tensor::matrix(widths_[l + 1], widths_[l]));
    params_.push_back(Tensor({widths_[l + 1]}));
  }
}

MlpModel MlpModel::initialized(std::vector<std::size_t> widths, std::uint64_t seed) {
  MlpModel model(std::move(widths));
  Rng rng(seed);
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    const bool hidden = l + 1 < model.layer_count();
    const double fan_in = static_cast<double>(model.widths_[l]);
    const double scale = std::sqrt((hidden ? 2.0 : 1.0) / fan_in);
    for (double& w : model.params_[2 * l].values()) w = scale * rng.normal();
  }
  return model;
}

Tensor MlpModel::embed(const Tensor& x) const { return trace_forward(*this, x).embedding; }

ForwardTrace trace_forward(const MlpModel& model, const Tensor& x, const PrototypeHead* head) {
  check_input(model, x);
  ForwardTrace trace;
  trace.post.push_back(x);
  const std::size_t hidden_layers = model.layer_count() - 1;
  for (std::size_t l = 0; l < hidden_layers; ++l) {
    trace.pre.push_back(affine(trace.post.back(), model.weight(l), model.bias(l)));
    trace.post.push_back(relu(trace.pre.back()));
  }
  trace.embedding = trace.post.back();

  if (head == nullptr) {
    trace.scores = affine(trace.embedding, model.weight(hidden_layers), model.bias(hidden_layers));
    return trace;
  }

  check_head(model, *head);
  const std::size_t batch = x.rows();
  const std::size_t classes = head->centers.rows();
  const std::size_t dim = model.embedding_dim();
  trace.scores = Tensor::matrix(batch, classes);
  for (std::size_t b = 0; b < batch; ++b) {
    auto e = trace.embedding.row(b);
    for (std::size_t c = 0; c < classes; ++c) {
      auto p = head->centers.row(c);
      double d2 = 0.0;
      for (std::size_t k = 0; k < dim; ++k) d2 += (e[k] - p[k]) * (e[k] - p[k]);
      trace.scores(b, c) = -d2;
    }
  }
  return trace;
}

Tensor class_scores(const MlpModel& model, const Tensor& x, const PrototypeHead* head) {
  return trace_forward(model, x, head).scores;
}

Tensor softmax_rows(const Tensor& scores) {
  Tensor probs = scores;
  for (std::size_t b = 0; b < probs.rows(); ++b) {
    auto row = probs.row(b);
    const double peak = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - peak);
      total += v;
    }
    for (double& v : row) v /= total;
  }
  return probs;
}

Tensor forward(const MlpModel& model, const Tensor& x) {
  return softmax_rows(class_scores(model, x));
}

double cross_entropy(const Tensor& probs, std::span<const int> labels) {
  check_labels(labels, probs.rows(), probs.cols());
  double total = 0.0;
  for (std::size_t b = 0; b < probs.rows(); ++b) total += clamped_nll(probs(b, labels[b]));
  return total / static_cast<double>(probs.rows());
}

GradientReport backpropagate(const MlpModel& model, const ForwardTrace& trace,
                             const Tensor& dscores, const Tensor* dembedding,
                             const PrototypeHead* head, bool want_params) {
  require_same_shape(dscores, trace.scores, "backpropagate dscores");
  const std::size_t batch = trace.scores.rows();
  const std::size_t dim = model.embedding_dim();
  const std::size_t last = model.layer_count() - 1;

  GradientReport report;
  if (want_params) {
    for (const Tensor& p : model.parameters()) report.param_grads.emplace_back(p.shape());
  }

  Tensor demb = Tensor::matrix(batch, dim);
  if (head == nullptr) {
    const Tensor& w = model.weight(last);
    for (std::size_t b = 0; b < batch; ++b) {
      auto g = dscores.row(b);
      auto e = trace.embedding.row(b);
      auto out = demb.row(b);
      for (std::size_t c = 0; c < g.size(); ++c) {
        if (g[c] == 0.0) continue;
        auto wrow = w.row(c);
        for (std::size_t k = 0; k < dim; ++k) out[k] += g[c] * wrow[k];
        if (want_params) {
          auto gw = report.param_grads[2 * last].row(c);
          for (std::size_t k = 0; k < dim; ++k) gw[k] += g[c] * e[k];
          report.param_grads[2 * last + 1][c] += g[c];
        }
      }
    }
  } else {
    // score_c = -||e - p_c||^2  =>  d score_c / d e = -2 (e - p_c)
    for (std::size_t b = 0; b < batch; ++b) {
      auto g = dscores.row(b);
      auto e = trace.embedding.row(b);
      auto out = demb.row(b);
      for (std::size_t c = 0; c < g.size(); ++c) {
        if (g[c] == 0.0) continue;
        auto p = head->centers.row(c);
        for (std::size_t k = 0; k < dim; ++k) out[k] += -2.0 * g[c] * (e[k] - p[k]);
      }
    }
  }
  if (dembedding != nullptr) {
    require_same_shape(*dembedding, demb, "backpropagate dembedding");
    for (std::size_t i = 0; i < demb.size(); ++i) demb[i] += (*dembedding)[i];
  }

  Tensor upstream = std::move(demb);
  for (std::size_t l = last; l-- > 0;) {
    const Tensor& pre = trace.pre[l];
    const Tensor& input = trace.post[l];
    const Tensor& w = model.weight(l);
    const std::size_t out_dim = w.rows();
    const std::size_t in_dim = w.cols();
    Tensor down = Tensor::matrix(batch, in_dim);
    for (std::size_t b = 0; b < batch; ++b) {
      auto up = upstream.row(b);
      auto z = pre.row(b);
      auto a = input.row(b);
      auto dn = down.row(b);
      for (std::size_t o = 0; o < out_dim; ++o) {
        if (z[o] <= 0.0) continue;
        const double g = up[o];
        if (g == 0.0) continue;
        auto wrow = w.row(o);
        for (std::size_t i = 0; i < in_dim; ++i) dn[i] += g * wrow[i];
        if (want_params) {
          auto gw = report.param_grads[2 * l].row(o);
          for (std::size_t i = 0; i < in_dim; ++i) gw[i] += g * a[i];
          report.param_grads[2 * l + 1][o] += g;
        }
      }
    }
    upstream = std::move(down);
  }
  report.input_grad = std::move(upstream);
  return report;
}

GradientReport grad_input(const MlpModel& model, const Tensor& x, std::span<const int> labels,
                          const LossCombination& loss, const PrototypeHead* head) {
  if (loss.w_proto != 0.0 && head == nullptr) {
    throw std::invalid_argument("prototype loss term requires a prototype context");
  }
  const ForwardTrace trace = trace_forward(model, x, head);
  const std::size_t batch = trace.scores.rows();
  const std::size_t classes = trace.scores.cols();
  check_labels(labels, batch, classes);
  if (loss.w_ce_runnerup != 0.0 && classes < 2) {
    throw std::invalid_argument("runner-up loss term needs at least two classes");
  }

  const Tensor probs = softmax_rows(trace.scores);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  Tensor dscores = Tensor::matrix(batch, classes);
  Tensor demb;
  const bool use_proto = loss.w_proto != 0.0;
  if (use_proto) demb = Tensor::matrix(batch, model.embedding_dim());

  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    auto p = probs.row(b);
    auto g = dscores.row(b);
    const int y = labels[b];
    if (loss.w_ce_true != 0.0) {
      total += loss.w_ce_true * clamped_nll(p[y]);
      if (p[y] >= kLogFloor) {
        for (std::size_t c = 0; c < classes; ++c) g[c] += loss.w_ce_true * inv_batch * p[c];
        g[y] -= loss.w_ce_true * inv_batch;
      }
    }
    if (loss.w_ce_runnerup != 0.0) {
      int runner = -1;
      for (std::size_t c = 0; c < classes; ++c) {
        if (static_cast<int>(c) == y) continue;
        if (runner < 0 || p[c] > p[runner]) runner = static_cast<int>(c);
      }
      total -= loss.w_ce_runnerup * clamped_nll(p[runner]);
      if (p[runner] >= kLogFloor) {
        for (std::size_t c = 0; c < classes; ++c) g[c] -= loss.w_ce_runnerup * inv_batch * p[c];
        g[runner] += loss.w_ce_runnerup * inv_batch;
      }
    }
    if (use_proto) {
      auto e = trace.embedding.row(b);
      auto center = head->centers.row(y);
      auto de = demb.row(b);
      double d2 = 0.0;
      for (std::size_t k = 0; k < e.size(); ++k) {
        const double diff = e[k] - center[k];
        d2 += diff * diff;
        de[k] = 2.0 * loss.w_proto * inv_batch * diff;
      }
      total += loss.w_proto * d2;
    }
  }

  GradientReport report =
      backpropagate(model, trace, dscores, use_proto ? &demb : nullptr, head, false);
  report.loss = total * inv_batch;
  return report;
}

GradientReport grad_params(const MlpModel& model, const Tensor& x, std::span<const int> labels) {
  const ForwardTrace trace = trace_forward(model, x);
  const std::size_t batch = trace.scores.rows();
  const std::size_t classes = trace.scores.cols();
  check_labels(labels, batch, classes);
  const Tensor probs = softmax_rows(trace.scores);
  const double inv_batch = 1.0 / static_cast<double>(batch);
  Tensor dscores = Tensor::matrix(batch, classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int y = labels[b];
    total += clamped_nll(probs(b, y));
    if (probs(b, y) < kLogFloor) continue;
    for (std::size_t c = 0; c < classes; ++c) dscores(b, c) = inv_batch * probs(b, c);
    dscores(b, y) -= inv_batch;
  }
  GradientReport report = backpropagate(model, trace, dscores, nullptr, nullptr, true);
  report.loss = total * inv_batch;
  return report;
}

MlpModel sgd_step(MlpModel model, const GradientReport& grads, double lr) {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be non-negative");
  auto& params = model.parameters();
  if (grads.param_grads.size() != params.size()) {
    throw ShapeError("gradient report does not match model parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_shape(params[i], grads.param_grads[i], "sgd_step");
    auto p = params[i].values();
    auto g = grads.param_grads[i].values();
    for (std::size_t k = 0; k < p.size(); ++k) p[k] -= lr * g[k];
  }
  return model;
}

}  // namespace acraft
