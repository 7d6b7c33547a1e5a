#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "acraft/commands.hpp"

int main(int argc, char** argv) {
  using namespace acraft;

  CLI::App app{"Evolves poisoning attacks against a few-shot class-incremental learner."};
  app.require_subcommand(1);

  GlobalOptions opts;
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  app.add_option("--config", config_path, "JSON run config (desk defaults when omitted)")
      ->check(CLI::ExistingFile);
  auto* seed_opt = app.add_option("--seed", seed, "master seed override");
  auto* out_opt = app.add_option("--out", out_dir, "output directory override");
  app.add_flag("--mock", opts.mock, "use the offline mock generator");

  auto* evolve = app.add_subcommand("evolve", "run the generate-evaluate-select loop");
  bool resume = false;
  evolve->add_flag("--resume", resume, "continue from the checkpoint in the output directory");

  auto* attack = app.add_subcommand("attack", "clean vs attacked session table for one attack");
  std::string attack_name;
  attack->add_option("--attack", attack_name, "fgsm, pgd, cw, deepfool, acraft or spec:<file>")
      ->required();

  app.add_subcommand("verify-tables", "recheck the embedded published table arithmetic");

  auto* report = app.add_subcommand("report", "summarize a run directory");
  std::string run_dir;
  report->add_option("run_dir", run_dir, "directory written by evolve")->required();

  app.add_subcommand("fscil-train", "train the clean target and print its session accuracies");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (!config_path.empty()) opts.config = config_path;
  if (*seed_opt) opts.seed = seed;
  if (*out_opt) opts.out = out_dir;

  if (*evolve) return cmd_evolve(opts, resume, std::cout, std::cerr);
  if (*attack) return cmd_attack(opts, attack_name, std::cout, std::cerr);
  if (app.got_subcommand("verify-tables")) return cmd_verify_tables(std::cout);
  if (*report) return cmd_report(run_dir, std::cout, std::cerr);
  return cmd_fscil_train(opts, std::cout, std::cerr);
}
