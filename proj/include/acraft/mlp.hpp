#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "acraft/tensor.hpp"

namespace acraft {

/// Weights of the three loss terms an attack can climb or descend:
///   w_ce_true * CE(f(x), y) - w_ce_runnerup * CE(f(x), y2) + w_proto * ||emb(x) - p_y||^2
/// where y2 is the highest-probability class other than y.
struct LossCombination {
  double w_ce_true = 1.0;
  double w_ce_runnerup = 0.0;
  double w_proto = 0.0;

  friend bool operator==(const LossCombination&, const LossCombination&) = default;
};

/// Class centers in embedding space, shape [classes, embedding_dim]. When a
/// head is supplied, class scores are -||emb(x) - center_c||^2 instead of
/// the model's own linear output layer.
struct PrototypeHead {
  Tensor centers;
};

class MlpModel;

/// White-box access to a differentiable target: the model, an optional
/// prototype head replacing its linear output, and an optional counter that
/// attacks bump once per input-gradient evaluation.
struct ModelView {
  const MlpModel* model = nullptr;
  const PrototypeHead* prototypes = nullptr;
  std::size_t* grad_evals = nullptr;
};

/// Fully connected network: rectifier hidden layers, linear output layer,
/// softmax on top. widths = {input_dim, hidden..., classes}.
///
/// The embedding of an input is the activation vector of the last hidden
/// layer (the raw input when there are no hidden layers).
class MlpModel {
 public:
  MlpModel() = default;
  /// All parameters zero.
  explicit MlpModel(std::vector<std::size_t> widths);
  /// He-normal hidden weights, zero biases.
  static MlpModel initialized(std::vector<std::size_t> widths, std::uint64_t seed);

  const std::vector<std::size_t>& widths() const { return widths_; }
  std::size_t input_dim() const { return widths_.front(); }
  std::size_t num_classes() const { return widths_.back(); }
  std::size_t embedding_dim() const { return widths_[widths_.size() - 2]; }
  std::size_t layer_count() const { return widths_.size() - 1; }

  /// Parameters in the order W0, b0, W1, b1, ...; W_l has shape [out, in].
  std::vector<Tensor>& parameters() { return params_; }
  const std::vector<Tensor>& parameters() const { return params_; }
  const Tensor& weight(std::size_t layer) const { return params_[2 * layer]; }
  const Tensor& bias(std::size_t layer) const { return params_[2 * layer + 1]; }

  Tensor embed(const Tensor& x) const;

  friend bool operator==(const MlpModel&, const MlpModel&) = default;

 private:
  std::vector<std::size_t> widths_;
  std::vector<Tensor> params_;
};

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardTrace {
  std::vector<Tensor> pre;   // pre-activations of each linear layer evaluated
  std::vector<Tensor> post;  // post[0] = x, post[l + 1] = relu(pre[l]) for hidden layers
  Tensor embedding;
  Tensor scores;             // logits, or negative squared prototype distances
};

ForwardTrace trace_forward(const MlpModel& model, const Tensor& x,
                           const PrototypeHead* head = nullptr);
Tensor class_scores(const MlpModel& model, const Tensor& x, const PrototypeHead* head = nullptr);
Tensor softmax_rows(const Tensor& scores);

/// Softmax probabilities of the linear head, shape [batch, classes].
Tensor forward(const MlpModel& model, const Tensor& x);

/// Mean of -log(max(p[label], 1e-12)) over the batch.
double cross_entropy(const Tensor& probs, std::span<const int> labels);

inline constexpr double kLogFloor = 1e-12;

struct GradientReport {
  double loss = 0.0;
  Tensor input_grad;
  /// Same order and shapes as MlpModel::parameters(); empty when only the
  /// input gradient was requested.
  std::vector<Tensor> param_grads;
};

/// Reverse pass from d(loss)/d(scores) and an optional extra
/// d(loss)/d(embedding) term.
GradientReport backpropagate(const MlpModel& model, const ForwardTrace& trace,
                             const Tensor& dscores, const Tensor* dembedding,
                             const PrototypeHead* head, bool want_params);

/// Exact gradient of the combined loss with respect to the input batch.
/// Labels index the columns of the class scores (prototype rows when a head
/// is given). A nonzero w_proto requires a head.
GradientReport grad_input(const MlpModel& model, const Tensor& x, std::span<const int> labels,
                          const LossCombination& loss, const PrototypeHead* head = nullptr);

/// Cross-entropy gradient of the linear head with respect to every parameter.
GradientReport grad_params(const MlpModel& model, const Tensor& x, std::span<const int> labels);

/// theta' = theta - lr * grad, elementwise.
MlpModel sgd_step(MlpModel model, const GradientReport& grads, double lr);

}  // namespace acraft
