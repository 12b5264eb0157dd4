// cosparse: command-line front end for pretraining, pruning sweeps,
// transfer runs, the pilot study and the prompt ablations.

#include "cosparse/harness.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

using namespace cosparse;

namespace {

struct CommonFlags {
  std::string config;
  std::vector<std::uint64_t> seeds;
  std::string out;
  std::string sparsity;
  std::string method;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config file (INI)");
  cmd->add_option("--seed", f.seeds, "seed(s), replacing the configured list")->delimiter(',');
  cmd->add_option("--out", f.out, "output directory");
  cmd->add_option("--sparsity", f.sparsity, "comma-separated sparsity list");
  cmd->add_option("--method", f.method, "comma-separated method names (e.g. omp,vpns,hydra+vp)");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? default_config() : load_config(f.config);
  if (!f.seeds.empty()) cfg.seeds = f.seeds;
  if (!f.out.empty()) cfg.out_dir = f.out;
  // Overrides go through the config parser so they get the same checks.
  std::ostringstream extra;
  if (!f.sparsity.empty()) extra << "sparsities = " << f.sparsity << "\n";
  if (!f.method.empty()) extra << "methods = " << f.method << "\n";
  if (!extra.str().empty()) {
    const auto o = parse_config("[experiment]\n" + extra.str());
    if (!f.sparsity.empty()) cfg.sparsities = o.sparsities;
    if (!f.method.empty()) cfg.methods = o.methods;
  }
  cfg.validate();
  return cfg;
}

void print_rows(const RunReport& report) {
  std::printf("%-14s %8s %5s %-18s %9s %9s %9s %7s\n", "method", "sparsity", "seed", "variant", "dense",
              "subnet", "achieved", "steps");
  for (const auto& r : report.rows) {
    if (!r.error.empty()) {
      std::printf("%-14s %8.4f %5llu %-18s ERROR %s\n", r.method.c_str(), r.sparsity,
                  static_cast<unsigned long long>(r.seed), r.variant.c_str(), r.error.c_str());
      continue;
    }
    std::printf("%-14s %8.4f %5llu %-18s %9.2f %9.2f %9.4f %7ld\n", r.method.c_str(), r.sparsity,
                static_cast<unsigned long long>(r.seed), r.variant.c_str(), r.dense_acc, r.subnet_acc,
                r.achieved_sparsity, r.steps_used);
  }
}

int finish(const ExperimentConfig& cfg, const std::string& kind, const RunReport& report) {
  write_reports(cfg, kind, report);
  print_rows(report);
  std::printf("reports: %s\n", (cfg.run_root() / kind).string().c_str());
  for (const auto& r : report.rows) {
    if (!r.error.empty()) return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Prompt-driven sparse subnetwork search and pruning baselines"};
  app.require_subcommand(1);

  CommonFlags flags;
  auto* pretrain = app.add_subcommand("pretrain", "train the upstream model for each seed");
  auto* prune = app.add_subcommand("prune", "prune, tune and evaluate every (method, sparsity, seed) cell");
  bool find_only = false;
  prune->add_flag("--find-only", find_only, "stop after mask finding");
  auto* tune = app.add_subcommand("tune", "tune a saved mask on the downstream task");
  std::string mask_file;
  tune->add_option("--mask", mask_file, "mask checkpoint")->required()->check(CLI::ExistingFile);
  auto* pilot = app.add_subcommand("pilot", "post-pruning prompt study");
  auto* transfer = app.add_subcommand("transfer", "find masks upstream, tune them on the target task");
  auto* ablate = app.add_subcommand("ablate", "input size / pad size / prompt kind / prompt phase grids");
  auto* report = app.add_subcommand("report", "aggregate an existing report.csv into curves");
  std::string kind = "experiment";
  report->add_option("--kind", kind, "report directory under the run root");
  for (auto* cmd : {pretrain, prune, tune, pilot, transfer, ablate, report}) add_common(cmd, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const ExperimentConfig cfg = resolve(flags);
    if (pretrain->parsed()) {
      for (auto seed : cfg.seeds) {
        pretrained_model(cfg, seed);
        std::printf("seed %llu: %s\n", static_cast<unsigned long long>(seed),
                    (cfg.run_root() / ("pretrain_seed" + std::to_string(seed) + ".ckpt")).string().c_str());
      }
      return 0;
    }
    if (prune->parsed()) {
      return find_only ? finish(cfg, "prune", run_prune(cfg)) : finish(cfg, "experiment", run_experiment(cfg));
    }
    if (tune->parsed()) return finish(cfg, "tune", run_tune_mask(cfg, mask_file));
    if (pilot->parsed()) return finish(cfg, "pilot", run_pilot(cfg));
    if (transfer->parsed()) return finish(cfg, "transfer", run_transfer(cfg, cfg.upstream, cfg.target.value_or(cfg.downstream)));
    if (ablate->parsed()) return finish(cfg, "ablation", run_ablation(cfg));
    if (report->parsed()) {
      const auto dir = cfg.run_root() / kind;
      const auto rows = read_report_csv(dir / "report.csv");
      emit_curves(rows, dir / "curves.csv");
      std::printf("%-14s %-18s %8s %3s %9s %8s\n", "method", "variant", "sparsity", "n", "mean", "std");
      for (const auto& p : curves(rows)) {
        std::printf("%-14s %-18s %8.4f %3d %9.3f %8.3f\n", p.method.c_str(), p.variant.c_str(), p.sparsity, p.n,
                    p.mean_acc, p.std_acc);
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
