#include "acraft/commands.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "acraft/published_tables.hpp"
#include "json.hpp"

namespace acraft {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string fixed2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

ordered_json session_json(const SessionReport& r) {
  return {{"acc", r.acc}, {"base_acc", r.base_acc}, {"new_acc", r.new_acc}, {"avg", r.avg}};
}

SessionReport session_from(const ordered_json& j) {
  SessionReport r;
  r.acc = j.at("acc").get<std::vector<double>>();
  r.base_acc = j.at("base_acc").get<std::vector<double>>();
  r.new_acc = j.at("new_acc").get<std::vector<double>>();
  r.avg = j.at("avg").get<double>();
  return r;
}

std::string log_text(const std::vector<LogRecord>& log) {
  std::string text;
  for (const LogRecord& r : log) text += log_line(r) + "\n";
  return text;
}

void print_config_error(const ConfigError& e, std::ostream& err) {
  err << "config error:\n";
  for (const std::string& d : e.diagnostics()) err << "  " << d << "\n";
}

ComparisonRow run_row(const std::string& name, const Poisoner& poisoner, const TaskContext& task,
                      const CleanRun& clean) {
  ComparisonRow row;
  row.name = name;
  row.report = run_protocol(*task.split, *task.dataset, poisoner, task.seed, task.fscil, &clean.base);
  row.drop = attack_drop(clean.report, row.report);
  return row;
}

}  // namespace

RunConfig resolve_config(const GlobalOptions& opts) {
  RunConfig cfg = opts.config ? load_config(*opts.config) : RunConfig{};
  if (opts.seed) cfg.seed = *opts.seed;
  if (opts.out) cfg.output_dir = opts.out->string();
  if (opts.mock) cfg.generator.mode = GeneratorMode::mock;
  return cfg;
}

std::string comparison_to_string(const ComparisonReport& report) {
  ordered_json rows = ordered_json::array();
  for (const ComparisonRow& r : report.rows) {
    rows.push_back({{"name", r.name}, {"drop", r.drop}, {"report", session_json(r.report)}});
  }
  return ordered_json{{"clean", session_json(report.clean)}, {"rows", rows}}.dump(2);
}

ComparisonReport comparison_from_string(const std::string& text) {
  const ordered_json j = ordered_json::parse(text);
  ComparisonReport out;
  out.clean = session_from(j.at("clean"));
  for (const auto& r : j.at("rows")) {
    out.rows.push_back({r.at("name").get<std::string>(), session_from(r.at("report")),
                        r.at("drop").get<double>()});
  }
  return out;
}

std::string format_session_table(const SessionReport& clean, const std::vector<ComparisonRow>& rows) {
  std::ostringstream s;
  char buf[64];
  s << "Method      ";
  for (std::size_t i = 0; i < clean.sessions(); ++i) {
    std::snprintf(buf, sizeof buf, "%7zu", i);
    s << buf;
  }
  s << "     Avg    Drop\n";
  auto line = [&](const std::string& name, const SessionReport& r, const std::string& drop) {
    std::snprintf(buf, sizeof buf, "%-12s", name.c_str());
    s << buf;
    for (double a : r.acc) {
      std::snprintf(buf, sizeof buf, "%7.2f", a);
      s << buf;
    }
    std::snprintf(buf, sizeof buf, "%8.2f%8s\n", r.avg, drop.c_str());
    s << buf;
  };
  line("clean", clean, "-");
  for (const ComparisonRow& r : rows) line(r.name, r.report, fixed2(r.drop));
  return s.str();
}

std::string session_table_csv(const SessionReport& clean, const std::vector<ComparisonRow>& rows) {
  std::ostringstream s;
  s << "method";
  for (std::size_t i = 0; i < clean.sessions(); ++i) s << ",s" << i;
  s << ",avg,drop\n";
  auto line = [&](const std::string& name, const SessionReport& r, double drop) {
    s << name;
    for (double a : r.acc) s << ',' << full(a);
    s << ',' << full(r.avg) << ',' << full(drop) << '\n';
  };
  line("clean", clean, 0.0);
  for (const ComparisonRow& r : rows) line(r.name, r.report, r.drop);
  return s.str();
}

std::string fitness_csv(const std::vector<LogRecord>& log) {
  std::ostringstream s;
  s << "t,action,reward,mu_phi,sigma2_phi,best_phi,best_id\n";
  for (const LogRecord& r : log) {
    s << r.t << ',' << r.action << ',' << full(r.reward) << ',' << full(r.mu_phi) << ','
      << full(r.sigma2_phi) << ',' << full(r.best_phi) << ',' << r.best_id << '\n';
  }
  return s.str();
}

int cmd_evolve(const GlobalOptions& opts, bool resume, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = resolve_config(opts);
  } catch (const ConfigError& e) {
    print_config_error(e, err);
    return kExitConfig;
  }
  try {
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    write_file(dir / "config.json", config_to_string(cfg) + "\n");
    const Task task = build_task(cfg);
    const EvolutionSetup setup = make_setup(cfg, task);

    AttackSpec best;
    CleanRunCache naive_cache;
    CleanRunCache* cache = &naive_cache;
    std::optional<Orchestrator> orchestrator;

    if (cfg.generator.mode == GeneratorMode::naive) {
      const NaiveResult naive = run_naive(setup, naive_cache);
      out << "naive spec " << naive.member.spec.id << ": phi " << fixed2(naive.member.fitness.phi)
          << (naive.member.fitness.failed ? " (failed: " + naive.member.fitness.error + ")" : "")
          << "\n";
      const LogRecord record{0, "naive", naive.member.fitness.phi, naive.member.fitness.phi, 0.0,
                             naive.member.fitness.phi, naive.member.spec.id};
      write_file(dir / kLogFile, log_line(record) + "\n");
      RunState state;
      state.seed = cfg.seed;
      state.population.capacity = 1;
      state.population.members = {naive.member};
      state.best_ever = naive.member;
      state.log = {record};
      state.failures = naive.member.fitness.failed ? 1 : 0;
      save_checkpoint(state, dir / kCheckpointFile);
      best = naive.member.spec;
    } else {
      orchestrator.emplace(setup);
      cache = &orchestrator->cache();
      orchestrator->on_generation = [&](const RunState& s) {
        save_checkpoint(s, dir / kCheckpointFile);
        write_file(dir / kLogFile, log_text(s.log));
        const LogRecord& r = s.log.back();
        out << "generation " << r.t << " " << r.action << " reward " << fixed2(r.reward)
            << " mean " << fixed2(r.mu_phi) << " best " << fixed2(r.best_phi) << " (" << r.best_id
            << ")\n";
      };
      RunState state;
      const fs::path checkpoint = dir / kCheckpointFile;
      if (resume && fs::exists(checkpoint)) {
        state = load_checkpoint(checkpoint);
        if (state.seed != cfg.seed) {
          err << "checkpoint seed " << state.seed << " does not match config seed " << cfg.seed << "\n";
          return kExitConfig;
        }
        out << "resuming at generation " << state.generation << "\n";
      } else {
        state = orchestrator->initialize();
        save_checkpoint(state, checkpoint);
        write_file(dir / kLogFile, log_text(state.log));
        out << "initial population: best " << fixed2(state.best_ever.fitness.phi) << " ("
            << state.best_ever.spec.id << ")\n";
      }
      state = orchestrator->resume(std::move(state));
      best = state.best_ever.spec;
      out << "finished after " << state.generation << " generations, " << state.failures
          << " failed candidates\n";
    }

    write_file(dir / kBestSpecFile, serialize(best) + "\n");
    const ComparisonReport cmp = compare(best, setup.task, *cache);
    write_file(dir / kComparisonFile, comparison_to_string(cmp) + "\n");
    write_file(dir / kComparisonCsv, session_table_csv(cmp.clean, cmp.rows));
    out << format_session_table(cmp.clean, cmp.rows);
    return kExitOk;
  } catch (const ConfigError& e) {
    print_config_error(e, err);
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_attack(const GlobalOptions& opts, const std::string& attack, std::ostream& out,
               std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = resolve_config(opts);
  } catch (const ConfigError& e) {
    print_config_error(e, err);
    return kExitConfig;
  }

  Poisoner poisoner;
  std::string name = attack;
  if (attack.rfind("spec:", 0) == 0) {
    const fs::path file = attack.substr(5);
    try {
      const AttackSpec spec = parse(read_file(file));
      poisoner = interpret(spec);
      name = spec.id;
    } catch (const SpecError& e) {
      err << file.string() << ": " << e.what() << "\n";
      return kExitConfig;
    } catch (const std::exception& e) {
      err << "error: " << e.what() << "\n";
      return kExitConfig;
    }
  } else if (attack == "fgsm" || attack == "pgd" || attack == "cw" || attack == "deepfool" ||
             attack == "acraft") {
    poisoner = baseline_poisoner(attack);
  } else {
    err << "unknown attack '" << attack << "' (expected fgsm, pgd, cw, deepfool, acraft or spec:<file>)\n";
    return kExitConfig;
  }

  try {
    const Task task = build_task(cfg);
    const TaskContext ctx = task.context();
    const auto clean = compute_clean_run(ctx);
    const std::vector<ComparisonRow> rows{run_row(name, poisoner, ctx, *clean)};
    out << format_session_table(clean->report, rows);
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    std::string stem = attack.rfind("spec:", 0) == 0 ? "spec" : attack;
    write_file(dir / ("attack-" + stem + ".csv"), session_table_csv(clean->report, rows));
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_verify_tables(std::ostream& out) {
  bool any_fail = false;
  char buf[160];
  for (const TableCheck& c : verify_tables()) {
    std::snprintf(buf, sizeof buf, "%-4s  %-28s computed %7.2f  listed %7.2f", status_label(c.status),
                  c.label.c_str(), c.computed, c.listed);
    out << buf;
    if (!c.note.empty()) out << "  (" << c.note << ")";
    out << "\n";
    any_fail = any_fail || c.status == CheckStatus::fail;
  }
  return any_fail ? kExitRuntime : kExitOk;
}

int cmd_report(const fs::path& run_dir, std::ostream& out, std::ostream& err) {
  for (const char* name : {kLogFile, kComparisonFile}) {
    if (!fs::exists(run_dir / name)) {
      err << "missing artifact: " << (run_dir / name).string() << "\n";
      return kExitMissingArtifact;
    }
  }
  try {
    std::vector<LogRecord> log;
    std::istringstream lines(read_file(run_dir / kLogFile));
    for (std::string line; std::getline(lines, line);) {
      if (!line.empty()) log.push_back(parse_log_line(line));
    }
    const ComparisonReport cmp = comparison_from_string(read_file(run_dir / kComparisonFile));

    std::ostringstream md;
    md << "# Evolution run summary\n\n";
    md << "Generations: " << log.size() << "\n\n";
    if (!log.empty()) {
      md << "Best fitness: " << fixed2(log.back().best_phi) << " (spec `" << log.back().best_id
         << "`)\n\n";
    }
    if (fs::exists(run_dir / kBestSpecFile)) {
      md << "Best spec:\n\n```json\n" << read_file(run_dir / kBestSpecFile) << "```\n\n";
    }
    md << "| Method |";
    for (std::size_t i = 0; i < cmp.clean.sessions(); ++i) md << " " << i << " |";
    md << " Avg | Drop |\n|---|";
    for (std::size_t i = 0; i < cmp.clean.sessions(); ++i) md << "---|";
    md << "---|---|\n";
    auto row = [&](const std::string& name, const SessionReport& r, const std::string& drop) {
      md << "| " << name << " |";
      for (double a : r.acc) md << " " << fixed2(a) << " |";
      md << " " << fixed2(r.avg) << " | " << drop << " |\n";
    };
    row("clean", cmp.clean, "-");
    for (const ComparisonRow& r : cmp.rows) row(r.name, r.report, fixed2(r.drop));

    std::ostringstream sessions;
    sessions << "method,session,acc\n";
    auto curve = [&](const std::string& name, const SessionReport& r) {
      for (std::size_t i = 0; i < r.sessions(); ++i) sessions << name << ',' << i << ',' << full(r.acc[i]) << '\n';
    };
    curve("clean", cmp.clean);
    for (const ComparisonRow& r : cmp.rows) curve(r.name, r.report);

    write_file(run_dir / "summary.md", md.str());
    write_file(run_dir / "fitness.csv", fitness_csv(log));
    write_file(run_dir / "sessions.csv", sessions.str());
    out << md.str();
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_fscil_train(const GlobalOptions& opts, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  try {
    cfg = resolve_config(opts);
  } catch (const ConfigError& e) {
    print_config_error(e, err);
    return kExitConfig;
  }
  try {
    const Task task = build_task(cfg);
    const auto clean = compute_clean_run(task.context());
    out << format_session_table(clean->report, {});
    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    std::ostringstream csv;
    write_session_csv(csv, clean->report);
    write_file(dir / "clean_sessions.csv", csv.str());
    return kExitOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace acraft
