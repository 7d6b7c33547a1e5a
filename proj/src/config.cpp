#include "acraft/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace acraft {

using nlohmann::ordered_json;

namespace {

std::string join(const std::vector<std::string>& lines) {
  std::string out;
  for (const std::string& l : lines) {
    if (!out.empty()) out += "\n";
    out += l;
  }
  return out;
}

class Section {
 public:
  Section(const ordered_json& root, const std::string& key, std::string path,
          std::vector<std::string>& diags, std::vector<std::string> keys)
      : path_(std::move(path)), diags_(diags) {
    if (!root.contains(key)) return;
    const ordered_json& obj = root.at(key);
    if (!obj.is_object()) {
      fail("", "expected an object");
      return;
    }
    obj_ = &obj;
    for (const auto& [k, v] : obj.items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail(k, "unknown key");
    }
  }

  // Root-level reader.
  Section(const ordered_json& root, std::vector<std::string>& diags, std::vector<std::string> keys)
      : diags_(diags) {
    if (!root.is_object()) {
      fail("", "config must be a JSON object");
      return;
    }
    obj_ = &root;
    for (const auto& [k, v] : root.items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail(k, "unknown key");
    }
  }

  const ordered_json* get(const char* key) const {
    if (obj_ == nullptr || !obj_->contains(key)) return nullptr;
    return &obj_->at(key);
  }

  void real(const char* key, double& out, double lo, double hi, bool open_lo = false,
            bool open_hi = false) {
    const ordered_json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_number()) return fail(key, "expected a number");
    const double x = v->get<double>();
    const bool ok = std::isfinite(x) && (open_lo ? x > lo : x >= lo) && (open_hi ? x < hi : x <= hi);
    if (!ok) return fail(key, "must lie in " + interval(lo, hi, open_lo, open_hi));
    out = x;
  }

  template <class Int>
  void integer(const char* key, Int& out, std::int64_t lo,
               std::int64_t hi = std::numeric_limits<std::int64_t>::max()) {
    const ordered_json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_number_integer()) return fail(key, "expected an integer");
    if (v->is_number_unsigned()) {
      const auto u = v->get<std::uint64_t>();
      if (u > static_cast<std::uint64_t>(hi)) return fail(key, "must be at most " + std::to_string(hi));
      if (lo > 0 && u < static_cast<std::uint64_t>(lo)) {
        return fail(key, "must be at least " + std::to_string(lo));
      }
      out = static_cast<Int>(u);
      return;
    }
    const auto i = v->get<std::int64_t>();
    if (i < lo || i > hi) {
      return fail(key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
    out = static_cast<Int>(i);
  }

  void seed(const char* key, std::uint64_t& out) {
    const ordered_json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
      return fail(key, "expected a non-negative integer");
    }
    out = v->get<std::uint64_t>();
  }

  void boolean(const char* key, bool& out) {
    const ordered_json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_boolean()) return fail(key, "expected a boolean");
    out = v->get<bool>();
  }

  void string(const char* key, std::string& out) {
    const ordered_json* v = get(key);
    if (v == nullptr) return;
    if (!v->is_string()) return fail(key, "expected a string");
    out = v->get<std::string>();
  }

  void fail(const std::string& key, const std::string& message) {
    diags_.push_back(field(key) + ": " + message);
  }

  std::string field(const std::string& key) const {
    if (path_.empty()) return key.empty() ? "<root>" : key;
    return key.empty() ? path_ : path_ + "." + key;
  }

 private:
  static std::string interval(double lo, double hi, bool open_lo, bool open_hi) {
    std::ostringstream s;
    s << (open_lo ? "(" : "[") << lo << ", " << hi << (open_hi ? ")" : "]");
    return s.str();
  }

  const ordered_json* obj_ = nullptr;
  std::string path_;
  std::vector<std::string>& diags_;
};

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

ConfigError::ConfigError(std::vector<std::string> diagnostics)
    : std::runtime_error(join(diagnostics)), diagnostics_(std::move(diagnostics)) {}

RunConfig parse_config(const std::string& text) {
  ordered_json root;
  try {
    root = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError({std::string("<root>: not valid JSON: ") + e.what()});
  }
  RunConfig cfg;
  std::vector<std::string> diags;
  Section top(root, diags,
              {"dataset", "split", "fscil", "evolution", "evaluator", "controller", "generator",
               "seed", "output_dir"});
  top.seed("seed", cfg.seed);
  top.string("output_dir", cfg.output_dir);
  if (!root.is_object()) throw ConfigError(diags);

  Section ds(root, "dataset", "dataset", diags,
             {"source", "path", "classes", "per_class", "dim", "separation"});
  ds.string("source", cfg.dataset.source);
  if (cfg.dataset.source != "synthetic" && cfg.dataset.source != "binary") {
    ds.fail("source", "must be \"synthetic\" or \"binary\"");
  }
  ds.string("path", cfg.dataset.path);
  if (cfg.dataset.source == "binary" && cfg.dataset.path.empty()) ds.fail("path", "required for a binary source");
  ds.integer("classes", cfg.dataset.classes, 2);
  ds.integer("per_class", cfg.dataset.per_class, 1);
  ds.integer("dim", cfg.dataset.dim, 1);
  ds.real("separation", cfg.dataset.separation, 0.0, kInf, false, true);

  Section sp(root, "split", "split", diags, {"base_classes", "sessions", "ways", "shots", "test_per_class"});
  sp.integer("base_classes", cfg.split.base_classes, 1);
  sp.integer("sessions", cfg.split.sessions, 0);
  sp.integer("ways", cfg.split.ways, 1);
  sp.integer("shots", cfg.split.shots, 1);
  sp.integer("test_per_class", cfg.split.test_per_class, 1);
  if (cfg.dataset.source == "synthetic") {
    if (cfg.split.base_classes + cfg.split.sessions * cfg.split.ways > cfg.dataset.classes) {
      sp.fail("", "base_classes + sessions * ways exceeds dataset.classes");
    }
    if (cfg.split.test_per_class + cfg.split.shots > cfg.dataset.per_class) {
      sp.fail("", "test_per_class + shots exceeds dataset.per_class");
    }
  }

  Section fs(root, "fscil", "fscil", diags, {"epochs", "lr", "batch_size", "hidden"});
  fs.integer("epochs", cfg.fscil.epochs, 0);
  fs.real("lr", cfg.fscil.lr, 0.0, kInf, false, true);
  fs.integer("batch_size", cfg.fscil.batch_size, 1);
  if (const ordered_json* hidden = fs.get("hidden")) {
    bool ok = hidden->is_array() && !hidden->empty();
    std::vector<std::size_t> widths;
    if (ok) {
      for (const auto& w : *hidden) {
        if (!w.is_number_unsigned() || w.get<std::uint64_t>() == 0) {
          ok = false;
          break;
        }
        widths.push_back(w.get<std::size_t>());
      }
    }
    if (ok) {
      cfg.fscil.hidden = widths;
    } else {
      fs.fail("hidden", "expected a nonempty array of positive integers");
    }
  }

  Section ev(root, "evolution", "evolution", diags,
             {"population", "t_max", "offspring", "window", "tol", "update_interval", "seed_specs"});
  ev.integer("population", cfg.evolution.population, 1);
  ev.integer("t_max", cfg.evolution.t_max, 0);
  ev.integer("offspring", cfg.evolution.offspring, 1);
  ev.integer("window", cfg.evolution.window, 1);
  ev.real("tol", cfg.evolution.tol, 0.0, kInf, false, true);
  ev.integer("update_interval", cfg.evolution.update_interval, 0);
  if (const ordered_json* specs = ev.get("seed_specs")) {
    if (!specs->is_array()) {
      ev.fail("seed_specs", "expected an array of attack specs");
    } else {
      for (std::size_t i = 0; i < specs->size(); ++i) {
        const std::string where = "seed_specs[" + std::to_string(i) + "]";
        try {
          cfg.evolution.seed_specs.push_back(parse((*specs)[i].dump()));
        } catch (const SpecError& e) {
          const std::string msg = e.what();
          const std::size_t skip = e.field().empty() ? 0 : e.field().size() + 2;
          ev.fail(where + (e.field().empty() ? "" : "." + e.field()), msg.substr(skip));
        }
      }
      if (cfg.evolution.seed_specs.size() > cfg.evolution.population) {
        ev.fail("seed_specs", "more seed specs than population slots");
      }
    }
  }

  Section el(root, "evaluator", "evaluator", diags,
             {"alpha", "w_succ", "w_cost", "penalty", "eps_max", "t_max_config"});
  el.real("alpha", cfg.evaluator.alpha, 0.0, 1.0);
  el.real("w_succ", cfg.evaluator.w_succ, -kInf, kInf, true, true);
  el.real("w_cost", cfg.evaluator.w_cost, -kInf, 0.0, true, true);
  el.real("penalty", cfg.evaluator.penalty, -kInf, kInf, true, true);
  el.real("eps_max", cfg.evaluator.eps_max, 0.0, 1.0, true);
  el.integer("t_max_config", cfg.evaluator.t_max_config, 1, kMaxIterations);

  Section ct(root, "controller", "controller", diags,
             {"eps_clip", "gamma", "lr", "value_lr", "epochs", "entropy_coef", "hidden"});
  ct.real("eps_clip", cfg.controller.eps_clip, 0.0, 1.0, true, true);
  ct.real("gamma", cfg.controller.gamma, 0.0, 1.0);
  ct.real("lr", cfg.controller.lr, 0.0, kInf, true, true);
  ct.real("value_lr", cfg.controller.value_lr, 0.0, kInf, true, true);
  ct.integer("epochs", cfg.controller.epochs, 1, 1000);
  ct.real("entropy_coef", cfg.controller.entropy_coef, 0.0, kInf, false, true);
  ct.integer("hidden", cfg.controller.hidden, 1, 4096);

  Section gn(root, "generator", "generator", diags,
             {"mode", "base_url", "model", "temperature", "timeout_seconds", "max_attempts",
              "backoff_ms", "in_flight", "refine_intensity", "naive_uses_llm"});
  std::string mode = std::string(mode_name(cfg.generator.mode));
  gn.string("mode", mode);
  if (mode == "mock") cfg.generator.mode = GeneratorMode::mock;
  else if (mode == "llm") cfg.generator.mode = GeneratorMode::llm;
  else if (mode == "naive") cfg.generator.mode = GeneratorMode::naive;
  else gn.fail("mode", "must be \"mock\", \"llm\" or \"naive\"");
  gn.string("base_url", cfg.generator.endpoint.base_url);
  gn.string("model", cfg.generator.endpoint.model);
  gn.real("temperature", cfg.generator.endpoint.temperature, 0.0, 2.0);
  gn.real("timeout_seconds", cfg.generator.endpoint.timeout_seconds, 0.0, 3600.0, true);
  gn.integer("max_attempts", cfg.generator.endpoint.max_attempts, 1, 10);
  gn.integer("backoff_ms", cfg.generator.endpoint.backoff_ms, 0, 600000);
  gn.integer("in_flight", cfg.evolution.workers, 1, 256);
  gn.real("refine_intensity", cfg.generator.mock.refine_intensity, 0.0, 1.0, true);
  gn.boolean("naive_uses_llm", cfg.generator.naive_uses_llm);

  if (!diags.empty()) throw ConfigError(diags);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"<file>: cannot read " + path.string()});
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str());
}

std::string config_to_string(const RunConfig& cfg) {
  ordered_json j;
  j["dataset"] = {{"source", cfg.dataset.source},       {"path", cfg.dataset.path},
                  {"classes", cfg.dataset.classes},     {"per_class", cfg.dataset.per_class},
                  {"dim", cfg.dataset.dim},             {"separation", cfg.dataset.separation}};
  j["split"] = {{"base_classes", cfg.split.base_classes},
                {"sessions", cfg.split.sessions},
                {"ways", cfg.split.ways},
                {"shots", cfg.split.shots},
                {"test_per_class", cfg.split.test_per_class}};
  j["fscil"] = {{"epochs", cfg.fscil.epochs},
                {"lr", cfg.fscil.lr},
                {"batch_size", cfg.fscil.batch_size},
                {"hidden", cfg.fscil.hidden}};
  ordered_json specs = ordered_json::array();
  for (const AttackSpec& s : cfg.evolution.seed_specs) specs.push_back(ordered_json::parse(serialize(s)));
  j["evolution"] = {{"population", cfg.evolution.population},
                    {"t_max", cfg.evolution.t_max},
                    {"offspring", cfg.evolution.offspring},
                    {"window", cfg.evolution.window},
                    {"tol", cfg.evolution.tol},
                    {"update_interval", cfg.evolution.update_interval},
                    {"seed_specs", specs}};
  j["evaluator"] = {{"alpha", cfg.evaluator.alpha},     {"w_succ", cfg.evaluator.w_succ},
                    {"w_cost", cfg.evaluator.w_cost},   {"penalty", cfg.evaluator.penalty},
                    {"eps_max", cfg.evaluator.eps_max}, {"t_max_config", cfg.evaluator.t_max_config}};
  j["controller"] = {{"eps_clip", cfg.controller.eps_clip},
                     {"gamma", cfg.controller.gamma},
                     {"lr", cfg.controller.lr},
                     {"value_lr", cfg.controller.value_lr},
                     {"epochs", cfg.controller.epochs},
                     {"entropy_coef", cfg.controller.entropy_coef},
                     {"hidden", cfg.controller.hidden}};
  j["generator"] = {{"mode", std::string(mode_name(cfg.generator.mode))},
                    {"base_url", cfg.generator.endpoint.base_url},
                    {"model", cfg.generator.endpoint.model},
                    {"temperature", cfg.generator.endpoint.temperature},
                    {"timeout_seconds", cfg.generator.endpoint.timeout_seconds},
                    {"max_attempts", cfg.generator.endpoint.max_attempts},
                    {"backoff_ms", cfg.generator.endpoint.backoff_ms},
                    {"in_flight", cfg.evolution.workers},
                    {"refine_intensity", cfg.generator.mock.refine_intensity},
                    {"naive_uses_llm", cfg.generator.naive_uses_llm}};
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  return j.dump(2);
}

Task build_task(const RunConfig& cfg) {
  Task task;
  task.seed = cfg.seed;
  task.fscil = cfg.fscil;
  if (cfg.dataset.source == "binary") {
    task.dataset = load_binary(cfg.dataset.path);
  } else {
    task.dataset = make_synthetic(cfg.dataset.classes, cfg.dataset.per_class, cfg.dataset.dim,
                                  cfg.dataset.separation, cfg.seed);
  }
  task.split = build_splits(task.dataset, cfg.split.base_classes, cfg.split.sessions, cfg.split.ways,
                            cfg.split.shots, cfg.split.test_per_class, cfg.seed);
  return task;
}

EvolutionSetup make_setup(const RunConfig& cfg, const Task& task) {
  EvolutionSetup setup;
  setup.task = task.context();
  setup.eval = cfg.evaluator;
  setup.controller = cfg.controller;
  setup.evolution = cfg.evolution;
  setup.generator = cfg.generator;
  setup.generator.mock.bounds.eps_max = cfg.evaluator.eps_max;
  setup.seed = cfg.seed;
  return setup;
}

}  // namespace acraft
