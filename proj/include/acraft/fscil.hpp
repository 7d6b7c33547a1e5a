#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "acraft/dataset.hpp"
#include "acraft/mlp.hpp"

namespace acraft {

struct FscilConfig {
  std::vector<std::size_t> hidden{64, 64};
  std::size_t epochs = 30;
  double lr = 0.05;
  std::size_t batch_size = 32;

  friend bool operator==(const FscilConfig&, const FscilConfig&) = default;
};

/// Frozen-embedding nearest-class-mean learner.
struct FscilState {
  MlpModel embedding;  // frozen after base training
  std::map<int, std::vector<double>> prototypes;
  std::vector<int> seen_classes;  // in the order they were learned
  std::size_t session = 0;        // number of adapt_session calls

  /// Prototype rows for the given classes, in that order.
  PrototypeHead head(std::span<const int> classes) const;

  friend bool operator==(const FscilState&, const FscilState&) = default;
};

/// Accuracies in percent. Entry 0 is the base session; new_acc[0] is 0
/// since no incremental class exists yet.
struct SessionReport {
  std::vector<double> acc;
  std::vector<double> base_acc;
  std::vector<double> new_acc;
  double avg = 0.0;

  std::size_t sessions() const { return acc.size(); }
  friend bool operator==(const SessionReport&, const SessionReport&) = default;
};

/// Perturbs one session's K-shot training batch. `labels` index the rows of
/// the prototype head in `view` (all seen classes plus the session's new
/// classes, with provisional prototypes from the clean shots).
using Poisoner =
    std::function<Tensor(const Tensor& shots, std::span<const int> labels, const ModelView& view)>;

FscilState train_base(const SessionSplit& split, const Dataset& ds, const FscilConfig& config,
                      std::uint64_t seed);

/// Adds one prototype per new class from the (possibly poisoned) shots.
/// Throws std::invalid_argument on a class already seen or a wrong shot count.
FscilState adapt_session(FscilState state, const Tensor& shots, std::span<const int> labels,
                         std::size_t shots_per_class);

/// Nearest prototype by squared Euclidean distance; ties go to the lower class index.
std::vector<int> classify(const FscilState& state, const Tensor& x);

/// Base training (or `pretrained` when given), then every incremental session:
/// optional poisoning of the shots, adaptation, evaluation on the cumulative
/// clean test pool.
SessionReport run_protocol(const SessionSplit& split, const Dataset& ds, const Poisoner& poisoner,
                           std::uint64_t seed, const FscilConfig& config = {},
                           const FscilState* pretrained = nullptr);

double avg_accuracy(std::span<const double> accs);

/// Avg(clean) - Avg(attacked).
double attack_drop(const SessionReport& clean, const SessionReport& attacked);

void write_session_csv(std::ostream& out, const SessionReport& report);

}  // namespace acraft
