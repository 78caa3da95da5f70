// fedsim: run federated-learning simulations from a config file.
//
//   fedsim run --config exp.cfg [--seed N] [--out DIR] [--csv-header]
//   fedsim sweep --config exp.cfg --grid grid.cfg [--out DIR]
//   fedsim qp-check [--instances N] [--seed N] [--verbose]

#include <cstdio>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "fedsim/config.hpp"
#include "fedsim/errors.hpp"
#include "fedsim/runner.hpp"
#include "qp_oracles.hpp"

namespace {

fedsim::KeyValues base_values(const std::string& config_path,
                              const std::optional<std::uint64_t>& seed,
                              const std::string& out_dir, bool csv_header) {
  fedsim::KeyValues kv = fedsim::load_key_values(config_path);
  if (seed) kv["seed"] = std::to_string(*seed);
  if (!out_dir.empty()) kv["out_dir"] = out_dir;
  if (csv_header) kv["data.csv_header"] = "true";
  return kv;
}

int run_command(const std::string& config_path,
                const std::optional<std::uint64_t>& seed,
                const std::string& out_dir, bool csv_header) {
  const auto cfg =
      fedsim::build_config(base_values(config_path, seed, out_dir, csv_header));
  const auto result = fedsim::run(cfg);
  const auto& last = result.reports.back();
  std::printf("%s: %d rounds, avg_test_acc=%.4f avg_train_loss=%.6g\n",
              fedsim::to_string(cfg.algorithm.kind).c_str(), cfg.rounds,
              last.avg_test_acc, last.avg_train_loss);
  if (!cfg.out_dir.empty()) {
    std::printf("wrote %s\n", (cfg.out_dir / "report.csv").string().c_str());
  }
  return 0;
}

int sweep_command(const std::string& config_path, const std::string& grid_path,
                  const std::optional<std::uint64_t>& seed,
                  const std::string& out_dir, bool csv_header) {
  const fedsim::KeyValues base =
      base_values(config_path, seed, out_dir, csv_header);
  const auto cells = fedsim::expand_grid(grid_path);
  std::filesystem::path dir =
      base.contains("out_dir") ? base.at("out_dir") : std::string("sweep_out");
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "cells.csv", std::ios::binary);
  index << "cell,file,overrides\n";
  for (std::size_t c = 0; c < cells.size(); ++c) {
    fedsim::KeyValues kv = base;
    std::string overrides;
    for (const auto& [key, value] : cells[c]) {
      kv[key] = value;
      if (!overrides.empty()) overrides += ";";
      overrides += key + "=" + value;
    }
    kv.erase("out_dir");
    const auto cfg = fedsim::build_config(kv);
    char name[32];
    std::snprintf(name, sizeof name, "cell_%03zu", c);
    fedsim::RunOptions options;
    options.csv_path = dir / (std::string(name) + ".csv");
    std::ofstream(dir / (std::string(name) + ".config.txt"), std::ios::binary)
        << fedsim::to_text(fedsim::to_key_values(cfg));
    const auto result = fedsim::run(cfg, options);
    index << c << ',' << name << ".csv,\"" << overrides << "\"\n";
    std::printf("%s [%s] avg_test_acc=%.4f\n", name, overrides.c_str(),
                result.reports.back().avg_test_acc);
  }
  return 0;
}

int qp_check_command(int instances, std::uint64_t seed, bool verbose) {
  const auto report =
      fedsim::oracle::run_qp_oracle_suite(instances, seed, 1e-5, verbose);
  std::printf("qp-check: %d instances, %d failures, max |solver - grid| %.3g, "
              "max |solver - exact| %.3g, %.1f s\n",
              report.instances, report.failures, report.max_abs_error,
              report.max_exact_error, report.seconds);
  return report.failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated multi-objective optimization simulator"};
  app.require_subcommand(1);

  std::string config_path, grid_path, out_dir;
  std::optional<std::uint64_t> seed;
  bool csv_header = false;

  auto* run = app.add_subcommand("run", "Run one experiment");
  run->add_option("--config", config_path, "Config file")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", out_dir, "Output directory");
  run->add_flag("--csv-header", csv_header, "CSV input has a header row");

  auto* sweep = app.add_subcommand("sweep", "Grid sweep, one CSV per cell");
  sweep->add_option("--config", config_path, "Base config file")->required();
  sweep->add_option("--grid", grid_path, "Grid file (key = v1 | v2 ...)")
      ->required();
  sweep->add_option("--seed", seed, "Override the config seed");
  sweep->add_option("--out", out_dir, "Output directory");
  sweep->add_flag("--csv-header", csv_header, "CSV input has a header row");

  int instances = 200;
  std::uint64_t qp_seed = 1;
  bool verbose = false;
  auto* qp = app.add_subcommand("qp-check",
                                "Compare the QP solver with brute force");
  qp->add_option("--instances", instances, "Random instances")
      ->check(CLI::PositiveNumber);
  qp->add_option("--seed", qp_seed, "Instance seed");
  qp->add_flag("--verbose", verbose, "Print every instance");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return run_command(config_path, seed, out_dir, csv_header);
    if (*sweep) {
      return sweep_command(config_path, grid_path, seed, out_dir, csv_header);
    }
    if (*qp) return qp_check_command(instances, qp_seed, verbose);
  } catch (const fedsim::Error& e) {
    std::fprintf(stderr, "fedsim: error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "fedsim: unexpected error: %s\n", e.what());
    return 1;
  }
  return 0;
}
