// cnorm: run comparison experiments, print report tables, certify gradients.

#include <cstdio>
#include <exception>
#include <iostream>

#include <CLI11.hpp>

#include "cnorm/error.hpp"
#include "cnorm/experiment.hpp"
#include "cnorm/gradcheck.hpp"

namespace {

int run_gradcheck(double tolerance, std::size_t seeds) {
  cnorm::GradcheckOptions opts;
  opts.tolerance = tolerance;
  opts.acn_tolerance = 10.0 * tolerance;
  bool all = true;
  for (const auto& layer : cnorm::gradcheck_layers()) {
    double worst = 0.0;
    std::string worst_name;
    bool pass = true;
    double tol = 0.0;
    for (std::uint64_t seed = 1; seed <= seeds; ++seed)
      for (const auto& e : cnorm::gradcheck_layer(layer, seed, opts)) {
        tol = e.tolerance;
        pass = pass && e.passed();
        if (e.rel_error >= worst) worst = e.rel_error, worst_name = e.tensor;
      }
    std::printf("%-4s %-15s worst rel err %.3e (d%s) tol %.0e over %zu seeds\n", pass ? "PASS" : "FAIL",
                layer.c_str(), worst, worst_name.c_str(), tol, seeds);
    all = all && pass;
  }
  return all ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"context normalisation experiments"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "train every configured norm kind and write a report");
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> epochs;
  run->add_option("config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "override the config seed");
  run->add_option("--out", out, "override the report directory");
  run->add_option("--epochs", epochs, "override the epoch count");

  auto* table = app.add_subcommand("table", "print the summary table of a report");
  std::string report;
  table->add_option("report_dir", report, "report directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every layer's backward pass");
  double tolerance = 1e-5;
  std::size_t seeds = 5;
  grad->add_option("--tolerance", tolerance, "relative error bound (acn uses 10x)");
  grad->add_option("--seeds", seeds, "random problems per layer");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      cnorm::ExperimentConfig cfg = cnorm::load_config(config);
      if (seed) cfg.seed = *seed;
      if (out) cfg.out = *out;
      if (epochs) cfg.epochs = *epochs;
      const auto result = cnorm::run_experiment(cfg);
      std::cout << cnorm::emit_summary_table(result.report_dir);
      for (const auto& m : result.failed) std::cerr << "method failed: " << m << '\n';
      return result.ok() ? 0 : 1;
    }
    if (*table) {
      std::cout << cnorm::emit_summary_table(report);
      return 0;
    }
    if (*grad) return run_gradcheck(tolerance, seeds);
  } catch (const cnorm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
