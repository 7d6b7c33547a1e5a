#include "acraft/spec.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include "acraft/rng.hpp"
#include "json.hpp"

namespace acraft {

using ordered_json = nlohmann::ordered_json;

namespace {

constexpr double kLambdaLimit = 2.0;
constexpr double kWeightLimit = 1.0;
constexpr double kMinLambda = 1e-3;

constexpr std::array<std::string_view, 3> kFamilyNames{"single_step", "iterative",
                                                        "momentum_iterative"};
constexpr std::array<std::string_view, kInstructionCount> kInstructionNames{
    "forget_old", "damage_new", "reduce_cost", "stealth"};

bool in_closed(double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; }

void require_range(std::vector<Violation>& out, const char* field, double v, double lo, double hi,
                   bool open_low = false) {
  const bool ok = in_closed(v, lo, hi) && !(open_low && v == lo);
  if (!ok) {
    out.push_back({field, "must lie in " + std::string(open_low ? "(" : "[") + std::to_string(lo) +
                              ", " + std::to_string(hi) + "]"});
  }
}

}  // namespace

std::string_view family_name(Family f) { return kFamilyNames.at(static_cast<std::size_t>(f)); }

std::string_view instruction_name(InstructionKind kind) {
  return kInstructionNames.at(static_cast<std::size_t>(kind));
}

InstructionKind instruction_from_index(std::size_t index) {
  if (index >= kInstructionCount) throw std::out_of_range("instruction index");
  return static_cast<InstructionKind>(index);
}

std::vector<Violation> validate(const AttackSpec& spec) {
  std::vector<Violation> out;
  if (spec.id.empty()) out.push_back({"id", "must be nonempty"});
  if (static_cast<std::size_t>(spec.family) >= kFamilyNames.size()) {
    out.push_back({"family", "unknown family"});
  }
  require_range(out, "budget.epsilon", spec.budget.epsilon, 0.0, 1.0, true);
  require_range(out, "budget.alpha_step", spec.budget.alpha_step, 0.0, 1.0, true);
  if (spec.budget.iterations < 0 || spec.budget.iterations > kMaxIterations) {
    out.push_back({"budget.iterations", "must lie in [0, " + std::to_string(kMaxIterations) + "]"});
  }
  require_range(out, "mu", spec.mu, 0.0, 1.0);
  require_range(out, "lambda_rev", spec.lambda_rev, -kLambdaLimit, kLambdaLimit);
  if (spec.lambda_rev == 0.0) out.push_back({"lambda_rev", "must be nonzero"});
  require_range(out, "loss.w_ce_true", spec.loss.w_ce_true, -kWeightLimit, kWeightLimit);
  require_range(out, "loss.w_ce_runnerup", spec.loss.w_ce_runnerup, -kWeightLimit, kWeightLimit);
  require_range(out, "loss.w_proto", spec.loss.w_proto, -kWeightLimit, kWeightLimit);
  if (spec.loss.w_ce_true == 0.0 && spec.loss.w_ce_runnerup == 0.0 && spec.loss.w_proto == 0.0) {
    out.push_back({"loss", "at least one weight must be nonzero"});
  }
  if (spec.step_direction != 1 && spec.step_direction != -1) {
    out.push_back({"step_direction", "must be +1 or -1"});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string serialize(const AttackSpec& spec) {
  ordered_json doc;
  doc["id"] = spec.id;
  doc["rationale"] = spec.rationale;
  doc["family"] = std::string(family_name(spec.family));
  doc["budget"] = ordered_json{{"epsilon", spec.budget.epsilon},
                               {"alpha_step", spec.budget.alpha_step},
                               {"iterations", spec.budget.iterations}};
  doc["mu"] = spec.mu;
  doc["lambda_rev"] = spec.lambda_rev;
  doc["loss"] = ordered_json{{"w_ce_true", spec.loss.w_ce_true},
                             {"w_ce_runnerup", spec.loss.w_ce_runnerup},
                             {"w_proto", spec.loss.w_proto}};
  doc["step_direction"] = spec.step_direction;
  doc["random_start"] = spec.random_start;
  doc["per_step_projection"] = spec.per_step_projection;
  return doc.dump(2);
}

namespace {

class Reader {
 public:
  Reader(const ordered_json& obj, std::string prefix, std::vector<std::string> keys)
      : obj_(obj), prefix_(std::move(prefix)) {
    if (!obj.is_object()) throw SpecError(SpecErrorKind::malformed, path(""), "expected an object");
    for (const auto& [key, value] : obj.items()) {
      if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
        throw SpecError(SpecErrorKind::unknown_field, path(key), "unknown field");
      }
    }
    for (const std::string& key : keys) {
      if (!obj.contains(key)) throw SpecError(SpecErrorKind::malformed, path(key), "missing field");
    }
  }

  const ordered_json& at(const std::string& key) const { return obj_.at(key); }

  double number(const std::string& key) const {
    const ordered_json& v = obj_.at(key);
    if (!v.is_number()) throw SpecError(SpecErrorKind::type_error, path(key), "expected a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key) const {
    const ordered_json& v = obj_.at(key);
    if (!v.is_number_integer()) {
      throw SpecError(SpecErrorKind::type_error, path(key), "expected an integer");
    }
    if (v.is_number_unsigned() && v.get<std::uint64_t>() > 1'000'000'000ULL) {
      throw SpecError(SpecErrorKind::out_of_range, path(key), "integer too large");
    }
    const std::int64_t i = v.get<std::int64_t>();
    if (i < -1'000'000'000LL || i > 1'000'000'000LL) {
      throw SpecError(SpecErrorKind::out_of_range, path(key), "integer too large");
    }
    return i;
  }

  std::string string(const std::string& key) const {
    const ordered_json& v = obj_.at(key);
    if (!v.is_string()) throw SpecError(SpecErrorKind::type_error, path(key), "expected a string");
    return v.get<std::string>();
  }

  bool boolean(const std::string& key) const {
    const ordered_json& v = obj_.at(key);
    if (!v.is_boolean()) throw SpecError(SpecErrorKind::type_error, path(key), "expected a boolean");
    return v.get<bool>();
  }

  std::string path(const std::string& key) const {
    if (prefix_.empty()) return key;
    return key.empty() ? prefix_ : prefix_ + "." + key;
  }

 private:
  const ordered_json& obj_;
  std::string prefix_;
};

}  // namespace

AttackSpec parse(std::string_view text) {
  ordered_json doc;
  try {
    doc = ordered_json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw SpecError(SpecErrorKind::malformed, "", std::string("not valid JSON: ") + e.what());
  }
  const Reader top(doc, "",
                   {"id", "rationale", "family", "budget", "mu", "lambda_rev", "loss",
                    "step_direction", "random_start", "per_step_projection"});
  AttackSpec spec;
  spec.id = top.string("id");
  spec.rationale = top.string("rationale");
  const std::string family = top.string("family");
  const auto it = std::find(kFamilyNames.begin(), kFamilyNames.end(), family);
  if (it == kFamilyNames.end()) {
    throw SpecError(SpecErrorKind::out_of_range, "family", "unknown family '" + family + "'");
  }
  spec.family = static_cast<Family>(it - kFamilyNames.begin());

  const Reader budget(top.at("budget"), "budget", {"epsilon", "alpha_step", "iterations"});
  spec.budget.epsilon = budget.number("epsilon");
  spec.budget.alpha_step = budget.number("alpha_step");
  spec.budget.iterations = static_cast<int>(std::clamp<std::int64_t>(
      budget.integer("iterations"), -1, static_cast<std::int64_t>(kMaxIterations) + 1));

  spec.mu = top.number("mu");
  spec.lambda_rev = top.number("lambda_rev");

  const Reader loss(top.at("loss"), "loss", {"w_ce_true", "w_ce_runnerup", "w_proto"});
  spec.loss.w_ce_true = loss.number("w_ce_true");
  spec.loss.w_ce_runnerup = loss.number("w_ce_runnerup");
  spec.loss.w_proto = loss.number("w_proto");

  spec.step_direction = static_cast<int>(std::clamp<std::int64_t>(top.integer("step_direction"), -2, 2));
  spec.random_start = top.boolean("random_start");
  spec.per_step_projection = top.boolean("per_step_projection");

  const std::vector<Violation> violations = validate(spec);
  if (!violations.empty()) {
    throw SpecError(SpecErrorKind::out_of_range, violations.front().field,
                    violations.front().message);
  }
  return spec;
}

// ---------------------------------------------------------------------------
// Interpretation

namespace {

std::uint64_t content_seed(const AttackSpec& spec) {
  AttackSpec anonymous = spec;
  anonymous.id = "-";
  anonymous.rationale.clear();
  return fnv1a(serialize(anonymous));
}

std::string describe(const std::vector<Violation>& violations) {
  std::string out;
  for (const Violation& v : violations) {
    if (!out.empty()) out += "; ";
    out += v.field + ": " + v.message;
  }
  return out;
}

}  // namespace

AttackFn interpret(const AttackSpec& spec) {
  const std::vector<Violation> violations = validate(spec);
  if (!violations.empty()) {
    throw SpecError(SpecErrorKind::invalid, violations.front().field, describe(violations));
  }
  const std::uint64_t seed = content_seed(spec);
  switch (spec.family) {
    case Family::single_step:
      return [spec, seed](const Tensor& x, std::span<const int> labels, const ModelView& view) {
        if (!spec.random_start) {
          return single_step(x, labels, view, spec.budget.epsilon, spec.loss, spec.step_direction);
        }
        SignStepOptions options{spec.loss, spec.step_direction, true, true, seed};
        const PerturbationBudget one{spec.budget.epsilon, spec.budget.epsilon, 1};
        return pgd(x, labels, view, one, options);
      };
    case Family::iterative:
      return [spec, seed](const Tensor& x, std::span<const int> labels, const ModelView& view) {
        SignStepOptions options{spec.loss, spec.step_direction, spec.per_step_projection,
                                spec.random_start, seed};
        return pgd(x, labels, view, spec.budget, options);
      };
    case Family::momentum_iterative:
      return [spec, seed](const Tensor& x, std::span<const int> labels, const ModelView& view) {
        AcraftParams params;
        params.budget = spec.budget;
        params.mu = spec.mu;
        params.lambda_rev = spec.lambda_rev * spec.step_direction;
        params.loss = spec.loss;
        params.per_step_projection = spec.per_step_projection;
        params.random_start = spec.random_start;
        params.seed = seed;
        return acraft_attack(x, labels, view, params);
      };
  }
  throw SpecError(SpecErrorKind::invalid, "family", "unknown family");
}

// ---------------------------------------------------------------------------
// Distance and transformations

namespace {

constexpr std::size_t kNumericFields = 8;

// Ranges used to normalize numeric deltas.
constexpr std::array<double, kNumericFields> kRanges{1.0, 1.0, kMaxIterations, 1.0,
                                                     2 * kLambdaLimit, 2 * kWeightLimit,
                                                     2 * kWeightLimit, 2 * kWeightLimit};

std::array<double, kNumericFields> numeric(const AttackSpec& s) {
  return {s.budget.epsilon, s.budget.alpha_step, static_cast<double>(s.budget.iterations),
          s.mu,             s.lambda_rev,        s.loss.w_ce_true,
          s.loss.w_ce_runnerup, s.loss.w_proto};
}

std::string hex_id(char prefix, std::uint64_t v) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(1, prefix);
  for (int shift = 60; shift >= 0; shift -= 4) out += kDigits[(v >> shift) & 0xF];
  return out;
}

// Clamp into [lo, hi] widened to contain `origin`, so clamping never moves a
// value further from where it started.
double clamp_around(double v, double origin, double lo, double hi) {
  return std::clamp(v, std::min(lo, origin), std::max(hi, origin));
}

}  // namespace

double spec_distance(const AttackSpec& a, const AttackSpec& b) {
  const auto na = numeric(a);
  const auto nb = numeric(b);
  double total = 0.0;
  for (std::size_t i = 0; i < kNumericFields; ++i) total += std::abs(na[i] - nb[i]) / kRanges[i];
  total += a.family != b.family;
  total += a.step_direction != b.step_direction;
  total += a.random_start != b.random_start;
  total += a.per_step_projection != b.per_step_projection;
  return std::min(1.0, total / static_cast<double>(kSpecFieldCount));
}

double diversity(std::span<const AttackSpec> specs) {
  if (specs.size() < 2) throw std::invalid_argument("diversity needs at least two specs");
  double total = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (std::size_t j = i + 1; j < specs.size(); ++j) {
      total += spec_distance(specs[i], specs[j]);
      ++pairs;
    }
  }
  return total / static_cast<double>(pairs);
}

AttackSpec mutate(const AttackSpec& spec, double intensity, std::uint64_t seed,
                  const SearchBounds& bounds) {
  if (!(intensity > 0.0 && intensity <= 1.0)) {
    throw std::invalid_argument("mutation intensity must be in (0, 1]");
  }
  if (!validate(spec).empty()) throw SpecError(SpecErrorKind::invalid, "", "cannot mutate an invalid spec");
  Rng rng(seed);
  std::array<std::size_t, kNumericFields> order{};
  for (std::size_t i = 0; i < kNumericFields; ++i) order[i] = i;
  for (std::size_t i = kNumericFields - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);
  const std::size_t chosen = 1 + rng.below(kNumericFields);
  // Normalized movement budget shared by the chosen fields.
  const double per_field = intensity * static_cast<double>(kSpecFieldCount) / static_cast<double>(chosen);

  AttackSpec child = spec;
  child.id = hex_id('m', seed);
  for (std::size_t k = 0; k < chosen; ++k) {
    const std::size_t field = order[k];
    const double delta = rng.uniform(-per_field, per_field) * kRanges[field];
    switch (field) {
      case 0:
        child.budget.epsilon =
            clamp_around(spec.budget.epsilon + delta, spec.budget.epsilon, bounds.eps_min, bounds.eps_max);
        break;
      case 1:
        child.budget.alpha_step =
            clamp_around(spec.budget.alpha_step + delta, spec.budget.alpha_step, 1e-4, 1.0);
        break;
      case 2: {
        const int step = static_cast<int>(std::trunc(delta));  // toward zero keeps the bound
        child.budget.iterations = std::clamp(spec.budget.iterations + step, 0, kMaxIterations);
        break;
      }
      case 3:
        child.mu = std::clamp(spec.mu + delta, 0.0, 1.0);
        break;
      case 4: {
        double lambda = std::clamp(spec.lambda_rev + delta, -kLambdaLimit, kLambdaLimit);
        // Never cross or touch zero: stop just short of it on the original side.
        if (lambda * spec.lambda_rev <= 0.0 || std::abs(lambda) < kMinLambda) {
          lambda = spec.lambda_rev > 0 ? std::min(kMinLambda, spec.lambda_rev)
                                       : std::max(-kMinLambda, spec.lambda_rev);
        }
        child.lambda_rev = lambda;
        break;
      }
      case 5:
        child.loss.w_ce_true = std::clamp(spec.loss.w_ce_true + delta, -kWeightLimit, kWeightLimit);
        break;
      case 6:
        child.loss.w_ce_runnerup =
            std::clamp(spec.loss.w_ce_runnerup + delta, -kWeightLimit, kWeightLimit);
        break;
      case 7:
        child.loss.w_proto = std::clamp(spec.loss.w_proto + delta, -kWeightLimit, kWeightLimit);
        break;
    }
  }
  if (child.loss.w_ce_true == 0.0 && child.loss.w_ce_runnerup == 0.0 && child.loss.w_proto == 0.0) {
    child.loss = spec.loss;
  }
  if (spec_distance(child, spec) > intensity + 1e-12) {
    throw std::logic_error("mutation exceeded its distance bound");
  }
  if (!validate(child).empty()) throw std::logic_error("mutation produced an invalid spec");
  return child;
}

AttackSpec crossover(std::span<const AttackSpec> parents, std::uint64_t seed) {
  if (parents.size() < 2) throw std::invalid_argument("crossover needs at least two parents");
  for (const AttackSpec& p : parents) {
    if (!validate(p).empty()) throw SpecError(SpecErrorKind::invalid, "", "invalid parent " + p.id);
  }
  Rng rng(seed);
  auto pick = [&]() -> const AttackSpec& { return parents[rng.below(parents.size())]; };
  constexpr int kAttempts = 64;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    AttackSpec child;
    child.id = hex_id('x', seed);
    child.rationale = pick().rationale;
    child.family = pick().family;
    child.budget.epsilon = pick().budget.epsilon;
    child.budget.alpha_step = pick().budget.alpha_step;
    child.budget.iterations = pick().budget.iterations;
    child.mu = pick().mu;
    child.lambda_rev = pick().lambda_rev;
    child.loss.w_ce_true = pick().loss.w_ce_true;
    child.loss.w_ce_runnerup = pick().loss.w_ce_runnerup;
    child.loss.w_proto = pick().loss.w_proto;
    child.step_direction = pick().step_direction;
    child.random_start = pick().random_start;
    child.per_step_projection = pick().per_step_projection;
    if (validate(child).empty()) return child;
  }
  // Only an all-zero loss can fail; inherit one parent's loss block whole.
  AttackSpec child = parents.front();
  child.id = hex_id('x', seed);
  return child;
}

std::vector<AttackSpec> sample_genesis(std::uint64_t seed, std::size_t count,
                                       const SearchBounds& bounds) {
  if (count == 0) throw std::invalid_argument("genesis count must be positive");
  std::vector<AttackSpec> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(derive_seed(seed, {fnv1a("genesis"), i}));
    AttackSpec s;
    s.id = hex_id('n', derive_seed(seed, {i}));
    s.rationale = "Sampled from the genesis priors.";
    s.family = static_cast<Family>(rng.below(3));
    s.budget.epsilon = rng.uniform(bounds.eps_min, bounds.eps_max);
    s.budget.alpha_step = s.budget.epsilon * rng.uniform(0.1, 1.0);
    s.budget.iterations = static_cast<int>(rng.integer(1, kMaxIterations));
    s.mu = rng.uniform();
    if (rng.bernoulli(0.8)) {
      s.lambda_rev = rng.bernoulli(0.5) ? 1.0 : -1.0;
    } else {
      do {
        s.lambda_rev = rng.uniform(-kLambdaLimit, kLambdaLimit);
      } while (std::abs(s.lambda_rev) < kMinLambda);
    }
    // Flat Dirichlet via normalized exponentials.
    std::array<double, 3> w{};
    double sum = 0.0;
    for (double& v : w) {
      v = -std::log(1.0 - rng.uniform());
      sum += v;
    }
    s.loss.w_ce_true = w[0] / sum;
    s.loss.w_ce_runnerup = (rng.bernoulli(0.5) ? 1.0 : -1.0) * w[1] / sum;
    s.loss.w_proto = w[2] / sum;
    s.step_direction = rng.bernoulli(0.8) ? +1 : -1;
    s.random_start = rng.bernoulli(0.5);
    s.per_step_projection = rng.bernoulli(0.5);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace acraft
