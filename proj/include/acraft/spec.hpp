#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "acraft/attacks.hpp"

namespace acraft {

enum class Family { single_step, iterative, momentum_iterative };

std::string_view family_name(Family f);

/// One point of the searchable attack space: a rationale plus the
/// parameters of a gradient-sign poisoning attack.
struct AttackSpec {
  std::string id = "default";
  std::string rationale;
  Family family = Family::iterative;
  PerturbationBudget budget{};  // iterations ignored (treated as 1) for single_step
  double mu = 0.5;
  double lambda_rev = -1.0;
  LossCombination loss{};
  int step_direction = +1;  // +1 ascends the combined loss
  bool random_start = false;
  bool per_step_projection = true;

  friend bool operator==(const AttackSpec&, const AttackSpec&) = default;
};

inline constexpr int kMaxIterations = 20;  // T_max_config

struct Violation {
  std::string field;  // dotted path, e.g. "budget.epsilon"
  std::string message;
};

/// Empty when the spec is valid.
std::vector<Violation> validate(const AttackSpec& spec);

enum class SpecErrorKind { malformed, unknown_field, type_error, out_of_range, invalid };

class SpecError : public std::runtime_error {
 public:
  SpecError(SpecErrorKind kind, std::string field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message),
        kind_(kind),
        field_(std::move(field)) {}
  SpecErrorKind kind() const { return kind_; }
  const std::string& field() const { return field_; }

 private:
  SpecErrorKind kind_;
  std::string field_;
};

/// Canonical JSON document (fixed key order, shortest round-trip numbers).
std::string serialize(const AttackSpec& spec);
/// Strict inverse of serialize. Every key is required; unknown keys, wrong
/// types and out-of-range values raise SpecError of distinct kinds.
AttackSpec parse(std::string_view text);

using AttackFn =
    std::function<Tensor(const Tensor& x, std::span<const int> labels, const ModelView& view)>;

/// Compiles a spec into an attack closure. Throws SpecError(invalid) when
/// the spec does not validate.
AttackFn interpret(const AttackSpec& spec);

inline constexpr std::size_t kSpecFieldCount = 12;

/// Mean of per-field distances over the 12 searchable fields: numeric fields
/// contribute |delta| / range, categorical fields 0 or 1.
double spec_distance(const AttackSpec& a, const AttackSpec& b);
/// Mean pairwise distance; needs at least two specs.
double diversity(std::span<const AttackSpec> specs);

struct SearchBounds {
  double eps_min = 0.01;
  double eps_max = 0.3;
};

/// Local move: perturbs a random subset of numeric fields so that
/// spec_distance(result, spec) <= intensity.
AttackSpec mutate(const AttackSpec& spec, double intensity, std::uint64_t seed,
                  const SearchBounds& bounds = {});

/// Uniform crossover; every field of the child comes from one of the parents.
AttackSpec crossover(std::span<const AttackSpec> parents, std::uint64_t seed);

/// Fresh specs drawn from the genesis priors.
std::vector<AttackSpec> sample_genesis(std::uint64_t seed, std::size_t count,
                                       const SearchBounds& bounds = {});

enum class InstructionKind { forget_old, damage_new, reduce_cost, stealth };
inline constexpr std::size_t kInstructionCount = 4;

struct Instruction {
  InstructionKind kind = InstructionKind::forget_old;
  std::string payload;

  friend bool operator==(const Instruction&, const Instruction&) = default;
};

std::string_view instruction_name(InstructionKind kind);
InstructionKind instruction_from_index(std::size_t index);

}  // namespace acraft
