#include <doctest.h>

#include <filesystem>

#include "cnorm/error.hpp"
#include "cnorm/experiment.hpp"
#include "helpers.hpp"

using namespace cnorm;
using nlohmann::json;

namespace {

json small_config(const std::string& out) {
  return json{{"dataset", {{"type", "synthetic_gmm"}, {"k_true", 2}, {"n", 120}, {"dim", 4}, {"separation", 5.0}}},
              {"context", {{"strategy", "dataset"}}},
              {"norms", {"bn", "cn", "acn"}},
              {"k", 2},
              {"model", {{"type", "mlp"}, {"hidden", {8}}}},
              {"optimizer", {{"kind", "sgd"}, {"lr", 0.05}}},
              {"epochs", 2},
              {"batch_size", 32},
              {"seed", 3},
              {"test_fraction", 0.25},
              {"out", out}};
}

}  // namespace

TEST_CASE("config parsing") {
  const ExperimentConfig c = parse_config(small_config("r"));
  CHECK(c.norms.size() == 3);
  CHECK(c.hidden == std::vector<std::size_t>{8});
  CHECK(c.optimizer.kind == OptimizerKind::sgd_momentum);
  CHECK(c.test_fraction == 0.25);

  // config_to_json is parse_config's inverse.
  const ExperimentConfig d = parse_config(config_to_json(c));
  CHECK(config_to_json(d) == config_to_json(c));

  json j = small_config("r");
  j["epocs"] = 3;
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = small_config("r");
  j["optimizer"]["momentun"] = 0.5;
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = small_config("r");
  j["norms"] = {"bn", "groupnorm"};
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = small_config("r");
  j["batch_size"] = 1;
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = small_config("r");
  j["epochs"] = "many";
  CHECK_THROWS_AS(parse_config(j), ConfigError);
  j = small_config("r");
  j["dataset"] = {{"type", "mnist_idx"}, {"images", "no/such/file"}, {"labels", "x"}};
  CHECK_THROWS_AS(parse_config(j), ConfigError);
}

TEST_CASE("relative paths resolve against the config file") {
  testing::TempDir dir("cfg");
  std::filesystem::create_directories(dir.path() / "data");
  testing::write_idx_pair(dir.file("data/img"), dir.file("data/lab"), 8, 2, 2);
  json j = small_config("out");
  j["dataset"] = {{"type", "mnist_idx"}, {"images", "data/img"}, {"labels", "data/lab"}};
  testing::write_text(dir.file("c.json"), j.dump());
  const ExperimentConfig c = load_config(dir.file("c.json"));
  CHECK(std::filesystem::path(c.dataset.images) == dir.path() / "data/img");
  // The report directory is relative to where the run starts, not to the config.
  CHECK(c.out == "out");
  CHECK_THROWS_AS(load_config(dir.file("missing.json")), ConfigError);
}

TEST_CASE("a small run writes curves and a summary, deterministically") {
  testing::TempDir dir("run");
  const ExperimentConfig a = parse_config(small_config(dir.file("a")));
  const ExperimentConfig b = parse_config(small_config(dir.file("b")));
  const RunResult ra = run_experiment(a);
  const RunResult rb = run_experiment(b);
  CHECK(ra.ok());
  CHECK(rb.ok());

  for (const char* kind : {"bn", "cn", "acn"}) {
    CAPTURE(kind);
    const std::string name = std::string("curves_") + kind + ".csv";
    const auto rows = read_metric_csv(dir.file("a/" + name));
    // Epoch 0 plus two epochs, train and test each.
    CHECK(rows.size() == 6);
    CHECK(rows.front().epoch == 0);
    CHECK(testing::read_text(dir.file("a/" + name)) == testing::read_text(dir.file("b/" + name)));
  }

  const json s = json::parse(testing::read_text(dir.file("a/summary.json")));
  CHECK(s["methods"]["cn"]["status"] == "ok");
  CHECK(s["methods"]["cn"]["K"] == 2);
  CHECK(s["methods"]["bn"]["K"] == 1);
  CHECK(s.contains("timing"));
  CHECK(s["timing"]["acn"]["epoch_seconds"].size() == 2);
  CHECK_FALSE(std::filesystem::exists(dir.file("a/FAILED")));

  const std::string table = emit_summary_table(dir.file("a"));
  CHECK(table.find("acn") != std::string::npos);
  CHECK(table.find("test") != std::string::npos);
  CHECK_THROWS(emit_summary_table(dir.file("nowhere")));
}

TEST_CASE("a failing method is recorded and the rest still run") {
  testing::TempDir dir("fail");
  json j = small_config(dir.file("r"));
  // More mixture components than a batch has positions cannot be fitted.
  j["k"] = 500;
  j["norms"] = {"mixnorm", "none"};
  const RunResult r = run_experiment(parse_config(j));
  REQUIRE(r.failed == std::vector<std::string>{"mixnorm"});
  CHECK(std::filesystem::exists(dir.file("r/FAILED")));
  const json s = json::parse(testing::read_text(dir.file("r/summary.json")));
  CHECK(s["methods"]["mixnorm"]["status"] == "failed");
  CHECK(s["methods"]["none"]["status"] == "ok");
  const std::string table = emit_summary_table(dir.file("r"));
  CHECK(table.find("mixnorm") != std::string::npos);
  CHECK(table.find("none") != std::string::npos);
  // A clean rerun into the same directory removes the stale marker.
  j["k"] = 2;
  CHECK(run_experiment(parse_config(j)).ok());
  CHECK_FALSE(std::filesystem::exists(dir.file("r/FAILED")));
}
