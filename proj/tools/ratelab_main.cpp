// ratelab: desk-scale experiments for conjugate GP regression, sieve priors,
// Gram-matrix concentration, and graph-based semi-supervised regression.
//
// Subcommands mirror the experiment kinds; each writes <kind>_rows.csv,
// <kind>_summary.json and <kind>_fit.tsv into the output directory and exits
// zero iff every pass flag is true.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ratelab/harness.hpp"
#include "ratelab/version.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  long seed = -1;
  long workers = -1;
  long replicates = -1;
};

int run_one(ratelab::ExperimentKind kind, const CommonFlags& flags) {
  ratelab::ExperimentConfig cfg = ratelab::ExperimentConfig::defaults(kind);
  if (!flags.config_path.empty())
    cfg.overlay(ratelab::ExperimentConfig::parse_file(flags.config_path));
  if (flags.seed >= 0) cfg.set("run.seed", std::to_string(flags.seed));
  if (flags.workers >= 0) cfg.set("run.workers", std::to_string(flags.workers));
  if (flags.replicates >= 0) cfg.set("run.replicates", std::to_string(flags.replicates));
  if (!flags.out_dir.empty()) cfg.set("run.out", flags.out_dir);
  cfg.validate();

  const ratelab::ExperimentResult result = ratelab::run_experiment(cfg);
  const auto files = ratelab::emit_report(result, cfg, cfg.get_string("run.out"));

  std::cout << ratelab::kind_name(kind) << ": " << (result.pass ? "PASS" : "FAIL");
  if (result.failed_cells > 0)
    std::cout << " (" << result.failed_cells << "/" << result.total_cells << " cells failed)";
  std::cout << "\n";
  for (const auto& f : result.fits) {
    std::cout << "  " << f.statistic << ": slope " << f.slope << " vs target " << f.target
              << " +/- " << f.tolerance << (f.pass ? " [ok]" : " [off]")
              << (f.insufficient_points ? " [insufficient points]" : "") << "\n";
  }
  for (const auto& path : files) std::cout << "  wrote " << path << "\n";
  return result.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(ratelab::kVersion) +
               " - posterior contraction experiments at desk scale"};
  app.require_subcommand(1);

  CommonFlags flags;
  int exit_code = 0;

  for (const auto& [name, kind] : ratelab::experiment_kinds()) {
    std::string cmd = name;
    for (auto& ch : cmd)
      if (ch == '_') ch = '-';
    auto* sub = app.add_subcommand(cmd, "run the " + name + " experiment");
    sub->add_option("--config", flags.config_path, "key = value configuration file");
    sub->add_option("--seed", flags.seed, "64-bit seed override");
    sub->add_option("--out", flags.out_dir, "output directory override");
    sub->add_option("--workers", flags.workers, "worker thread count override");
    sub->add_option("--replicates", flags.replicates, "replicate count override");
    const auto kind_copy = kind;
    sub->callback([&flags, kind_copy, &exit_code] {
      exit_code = run_one(kind_copy, flags);
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const ratelab::config_error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return exit_code;
}
