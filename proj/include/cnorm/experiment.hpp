#pragma once

// Config-driven comparison runs: one model per norm kind on a shared dataset,
// contexts and seed; curves and a summary are written to a report directory.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cnorm/contexts.hpp"
#include "cnorm/model.hpp"
#include "cnorm/train.hpp"

namespace cnorm {

struct DatasetConfig {
  std::string type = "synthetic_gmm";  ///< synthetic_gmm | mnist_idx | csv
  std::size_t k_true = 2, n = 2000, dim = 16;
  double separation = 6.0;
  std::optional<std::uint64_t> seed;  ///< generator / subset seed, defaults to the run seed
  std::string images, labels;         ///< mnist_idx
  std::size_t subset_n = 0;
  std::string path;  ///< csv
};

struct ContextConfig {
  std::string strategy = "kmeans";
  std::optional<std::size_t> k;  ///< defaults to the shared K
  std::string features = "raw";
  std::string sidecar;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  ContextConfig context;
  std::vector<NormKind> norms;
  std::size_t k = 2;  ///< shared K for multi-mode norms
  std::string model = "mlp";
  std::vector<std::size_t> hidden{64, 64};
  OptimizerConfig optimizer;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  std::string out = "report";
  MixNormSchedule mixnorm;
  double test_fraction = 0.0;
};

/// Relative dataset/sidecar paths are resolved against `base_dir`.
ExperimentConfig parse_config(const nlohmann::json& j, const std::string& base_dir = ".");
ExperimentConfig load_config(const std::string& path);
nlohmann::json config_to_json(const ExperimentConfig& cfg);

/// Canonical display order of the methods.
const std::vector<NormKind>& method_order();

struct RunResult {
  std::string report_dir;
  std::vector<std::string> failed;  ///< methods that threw
  bool ok() const { return failed.empty(); }
};

/// Writes curves_<kind>.csv per method and summary.json (rewritten after each
/// method). A failing method is recorded, the rest still run, and a FAILED
/// marker file lists the failures.
RunResult run_experiment(const ExperimentConfig& cfg);

/// Plain-text table of the report's summary.json.
std::string emit_summary_table(const std::string& report_dir);

}  // namespace cnorm
