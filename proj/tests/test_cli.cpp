#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "support.hpp"

#include "acraft/commands.hpp"

using namespace acraft;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "acraft-cli-tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(ACRAFT_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  char buf[4096];
  for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, pipe)) > 0;) r.out.append(buf, n);
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

fs::path small_config_file(const fs::path& dir) {
  RunConfig cfg = testing::small_config();
  cfg.output_dir = (dir / "run").string();
  const fs::path p = dir / "config.json";
  spit(p, config_to_string(cfg));
  return p;
}

std::vector<std::vector<std::string>> csv_rows(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::istringstream cs(line);
    for (std::string cell; std::getline(cs, cell, ',');) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

std::vector<std::string> diagnostics_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.diagnostics();
  }
  return {};
}

}  // namespace

TEST_CASE("config defaults and round trip") {
  const RunConfig d = parse_config("{}");
  CHECK(d.dataset.classes == 40);
  CHECK(d.split.shots == 5);
  CHECK(d.evolution.population == 8);
  CHECK(d.evaluator.w_cost == -0.2);
  const RunConfig small = testing::small_config();
  CHECK(config_to_string(parse_config(config_to_string(small))) == config_to_string(small));
}

TEST_CASE("config diagnostics name their fields") {
  nlohmann::json j = nlohmann::json::parse(config_to_string(RunConfig{}));
  auto bad_spec = nlohmann::json::parse(serialize(pgd_fixture_spec()));
  bad_spec["mu"] = 2;
  j["evolution"]["seed_specs"] = nlohmann::json::array({bad_spec});
  auto diags = diagnostics_of(j.dump());
  REQUIRE(diags.size() == 1);
  CHECK(diags[0].find("evolution.seed_specs[0].mu") == 0);

  diags = diagnostics_of(R"({"datset": {}, "split": {"ways": 0, "shot": 1}, "evaluator": {"w_cost": 0.5}})");
  CHECK(diags.size() == 4);
  auto mentions = [&](const std::string& path) {
    return std::any_of(diags.begin(), diags.end(), [&](const std::string& d) { return d.find(path) == 0; });
  };
  CHECK(mentions("datset"));
  CHECK(mentions("split.ways"));
  CHECK(mentions("split.shot"));
  CHECK(mentions("evaluator.w_cost"));

  CHECK_FALSE(diagnostics_of("[]").empty());
  CHECK_FALSE(diagnostics_of("{nope").empty());
  CHECK_FALSE(diagnostics_of(R"({"generator": {"mode": "oracle"}})").empty());
}

TEST_CASE("config parsing is total") {
  const std::string base = config_to_string(testing::small_config());
  const nlohmann::json weird[] = {nullptr, -1, 0, 1e308, -0.5, "text", true, nlohmann::json::array(),
                                  nlohmann::json::object(), 18446744073709551615ull};
  Rng rng(23);
  for (int c = 0; c < 600; ++c) {
    nlohmann::json j = nlohmann::json::parse(base);
    std::vector<nlohmann::json::json_pointer> leaves;
    const auto flat = j.flatten();
    for (const auto& [k, v] : flat.items()) leaves.emplace_back(k);
    const auto& ptr = leaves[rng.below(leaves.size())];
    j[ptr] = weird[rng.below(std::size(weird))];
    try {
      parse_config(j.dump());
    } catch (const ConfigError& e) {
      CHECK_FALSE(e.diagnostics().empty());
      for (const auto& d : e.diagnostics()) CHECK(d.find(':') != std::string::npos);
    }
  }
}

TEST_CASE("seed and output overrides") {
  GlobalOptions o;
  o.seed = 99;
  o.out = "elsewhere";
  o.mock = true;
  const RunConfig c = resolve_config(o);
  CHECK(c.seed == 99);
  CHECK(c.output_dir == "elsewhere");
  CHECK(c.generator.mode == GeneratorMode::mock);
}

TEST_CASE("evolve writes its artifacts reproducibly and report summarizes them") {
  const fs::path dir = scratch("evolve");
  const fs::path cfg = small_config_file(dir);
  const Run first = cli("--config " + cfg.string() + " evolve");
  REQUIRE_MESSAGE(first.code == 0, first.out);
  const fs::path run = dir / "run";
  for (const char* f : {kCheckpointFile, kLogFile, kBestSpecFile, kComparisonFile}) CHECK(fs::exists(run / f));
  CHECK_NOTHROW(parse(slurp(run / kBestSpecFile)));
  const std::string log = slurp(run / kLogFile);

  fs::remove_all(run);
  REQUIRE(cli("--config " + cfg.string() + " evolve").code == 0);
  CHECK(slurp(run / kLogFile) == log);

  const ComparisonReport cmp = comparison_from_string(slurp(run / kComparisonFile));
  CHECK(comparison_from_string(comparison_to_string(cmp)).rows.size() == cmp.rows.size());
  CHECK(comparison_to_string(comparison_from_string(comparison_to_string(cmp))) == comparison_to_string(cmp));

  const Run rep = cli("report " + run.string());
  REQUIRE(rep.code == 0);
  std::vector<LogRecord> records;
  std::istringstream lines(log);
  for (std::string line; std::getline(lines, line);) records.push_back(parse_log_line(line));
  char best[64];
  std::snprintf(best, sizeof best, "%.2f", records.back().best_phi);
  CHECK(slurp(run / "summary.md").find(std::string("Best fitness: ") + best) != std::string::npos);
  const auto fitness = csv_rows(slurp(run / "fitness.csv"));
  CHECK(fitness.size() == records.size() + 1);
  for (std::size_t i = 0; i < records.size(); ++i) {
    CHECK(std::stod(fitness[i + 1][5]) == records[i].best_phi);
    CHECK(fitness[i + 1][6] == records[i].best_id);
  }

  // the best spec is a valid attack argument
  const Run atk = cli("--config " + cfg.string() + " attack --attack spec:" + (run / kBestSpecFile).string());
  CHECK_MESSAGE(atk.code == 0, atk.out);
}

TEST_CASE("resume picks up an existing checkpoint") {
  const fs::path dir = scratch("resume");
  const fs::path cfg = small_config_file(dir);
  REQUIRE(cli("--config " + cfg.string() + " evolve").code == 0);
  const std::string log = slurp(dir / "run" / kLogFile);
  REQUIRE(cli("--config " + cfg.string() + " evolve --resume").code == 0);
  CHECK(slurp(dir / "run" / kLogFile) == log);
  CHECK(cli("--config " + cfg.string() + " --seed 12 evolve --resume").code == 2);
}

TEST_CASE("attack tables keep session 0 and define drop by averages") {
  const fs::path dir = scratch("attack");
  const fs::path cfg = small_config_file(dir);
  const Run r = cli("--config " + cfg.string() + " attack --attack pgd");
  REQUIRE_MESSAGE(r.code == 0, r.out);
  CHECK(r.out.find("Avg") != std::string::npos);
  const auto rows = csv_rows(slurp(dir / "run" / "attack-pgd.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].front() == "method");
  const auto& clean = rows[1];
  const auto& pgd = rows[2];
  CHECK(clean[1] == pgd[1]);
  const std::size_t n = clean.size();
  CHECK(std::stod(pgd[n - 1]) == std::stod(clean[n - 2]) - std::stod(pgd[n - 2]));
}

TEST_CASE("naive mode evaluates a single one-shot spec") {
  const fs::path dir = scratch("naive");
  RunConfig cfg = testing::small_config();
  cfg.output_dir = (dir / "run").string();
  cfg.generator.mode = GeneratorMode::naive;
  spit(dir / "config.json", config_to_string(cfg));
  const Run r = cli("--config " + (dir / "config.json").string() + " evolve");
  REQUIRE_MESSAGE(r.code == 0, r.out);
  const std::string log = slurp(dir / "run" / kLogFile);
  CHECK(std::count(log.begin(), log.end(), '\n') == 1);
  CHECK(parse_log_line(log.substr(0, log.find('\n'))).action == "naive");
  CHECK(parse(slurp(dir / "run" / kBestSpecFile)).id == "naive");
  CHECK(cli("report " + (dir / "run").string()).code == 0);
}

TEST_CASE("exit codes") {
  const fs::path dir = scratch("codes");
  const fs::path cfg = small_config_file(dir);
  CHECK(cli("--config " + cfg.string() + " attack --attack teleport").code == 2);
  spit(dir / "bad.attackspec", "{\"id\": 3}");
  CHECK(cli("--config " + cfg.string() + " attack --attack spec:" + (dir / "bad.attackspec").string()).code == 2);
  spit(dir / "bad.json", R"({"evaluator": {"alpha": 4}})");
  const Run bad = cli("--config " + (dir / "bad.json").string() + " evolve");
  CHECK(bad.code == 2);
  CHECK(bad.out.find("evaluator.alpha") != std::string::npos);
  CHECK(cli("report " + (dir / "nothing-here").string()).code == 3);
  CHECK(cli("frobnicate").code == 2);
  CHECK(cli("").code == 2);
}

TEST_CASE("fscil-train prints the clean table") {
  const fs::path dir = scratch("train");
  const fs::path cfg = small_config_file(dir);
  const Run r = cli("--config " + cfg.string() + " fscil-train");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "run" / "clean_sessions.csv"));
}

TEST_CASE("verify-tables reports every row") {
  std::ostringstream out;
  const int code = cmd_verify_tables(out);
  const std::string text = out.str();
  CHECK(text.find("CLOSER") != std::string::npos);
  CHECK(text.find("FLAG") != std::string::npos);
  // one published drop (OrCo) misses its own Avg difference by more than the tolerance
  CHECK(code == (text.find("FAIL") != std::string::npos ? 1 : 0));
}

TEST_CASE("csv outputs parse back to the values they came from") {
  Rng rng(29);
  SessionReport clean;
  clean.acc = {rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(0, 100)};
  clean.avg = avg_accuracy(clean.acc);
  ComparisonRow row{"x", clean, 0.0};
  row.report.acc[2] = 1.0 / 3.0;
  row.report.avg = avg_accuracy(row.report.acc);
  row.drop = clean.avg - row.report.avg;
  const auto rows = csv_rows(session_table_csv(clean, {row}));
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::stod(rows[2][1 + i]) == row.report.acc[i]);
  CHECK(std::stod(rows[2][4]) == row.report.avg);
  CHECK(std::stod(rows[2][5]) == row.drop);
  const std::string table = format_session_table(clean, {row});
  CHECK(table.find("Drop") != std::string::npos);

  const std::vector<LogRecord> log{{1, "genesis/random/i0", 0.1, 0.2, 0.3, 0.4, "a"},
                                   {2, "refine/best/i1", -1.0 / 7, 0.5, 0.6, 0.7, "b"}};
  const auto f = csv_rows(fitness_csv(log));
  REQUIRE(f.size() == 3);
  CHECK(f[0] == std::vector<std::string>{"t", "action", "reward", "mu_phi", "sigma2_phi", "best_phi", "best_id"});
  CHECK(std::stod(f[2][2]) == -1.0 / 7);
}
