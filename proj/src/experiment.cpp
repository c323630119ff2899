#include "cnorm/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "cnorm/error.hpp"

namespace cnorm {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void only_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& into, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    into = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

std::string resolve(const std::string& p, const std::string& base) {
  if (p.empty()) return p;
  fs::path path(p);
  return path.is_absolute() ? p : (fs::path(base) / path).lexically_normal().string();
}

void require_file(const std::string& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " path is missing");
  if (!fs::exists(p)) throw ConfigError(what + " '" + p + "' does not exist");
}

void write_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << text;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

json metrics_json(const Metrics& m) {
  return {{"loss", m.loss}, {"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

Dataset load_dataset(const DatasetConfig& d, std::uint64_t seed) {
  const std::uint64_t s = d.seed.value_or(seed);
  if (d.type == "synthetic_gmm") {
    Rng rng(s, 0x5e7);
    return gen_synthetic_gmm(d.k_true, d.n, d.dim, d.separation, rng);
  }
  if (d.type == "mnist_idx") return load_mnist_idx(d.images, d.labels, d.subset_n, s);
  if (d.type == "csv") return load_csv(d.path);
  throw ConfigError("unknown dataset type '" + d.type + "'");
}

ContextSpec context_spec(const ExperimentConfig& cfg) {
  ContextSpec spec;
  spec.strategy = parse_strategy(cfg.context.strategy);
  spec.k = cfg.context.k.value_or(spec.strategy == ContextStrategy::kmeans ? cfg.k : 0);
  if (cfg.context.features == "raw") spec.features = ContextFeatures::raw;
  else if (cfg.context.features == "channel_mean") spec.features = ContextFeatures::channel_mean;
  else throw ConfigError("unknown context features '" + cfg.context.features + "'");
  if (!cfg.context.sidecar.empty()) spec.sidecar = read_sidecar(cfg.context.sidecar);
  return spec;
}

ModelSpec model_spec(const ExperimentConfig& cfg, const Dataset& ds) {
  const std::size_t classes = ds.classes;
  if (cfg.model == "mlp") return mlp_spec(ds.x.dim(1) * ds.x.dim(2), classes, cfg.hidden);
  if (cfg.model == "small_cnn") {
    if (ds.height * ds.width != ds.x.dim(2) || ds.height == 0)
      throw ConfigError("small_cnn needs image data with a known height and width");
    return small_cnn_spec(ds.x.dim(1), ds.height, ds.width, classes);
  }
  throw ConfigError("unknown model '" + cfg.model + "'");
}

}  // namespace

const std::vector<NormKind>& method_order() {
  static const std::vector<NormKind> order{NormKind::bn,      NormKind::ln, NormKind::modenorm, NormKind::mixnorm,
                                           NormKind::cn,      NormKind::cnx, NormKind::acn};
  return order;
}

ExperimentConfig parse_config(const json& j, const std::string& base_dir) {
  ExperimentConfig c;
  only_keys(j, {"dataset", "context", "norms", "k", "model", "optimizer", "epochs", "batch_size", "seed", "out",
                "mixnorm", "test_fraction"},
            "config");
  if (j.contains("dataset")) {
    const json& d = j["dataset"];
    only_keys(d, {"type", "k_true", "n", "dim", "separation", "seed", "images", "labels", "subset_n", "path"}, "dataset");
    read(d, "type", c.dataset.type, "dataset");
    read(d, "k_true", c.dataset.k_true, "dataset");
    read(d, "n", c.dataset.n, "dataset");
    read(d, "dim", c.dataset.dim, "dataset");
    read(d, "separation", c.dataset.separation, "dataset");
    if (d.contains("seed")) c.dataset.seed = d["seed"].get<std::uint64_t>();
    read(d, "images", c.dataset.images, "dataset");
    read(d, "labels", c.dataset.labels, "dataset");
    read(d, "subset_n", c.dataset.subset_n, "dataset");
    read(d, "path", c.dataset.path, "dataset");
    c.dataset.images = resolve(c.dataset.images, base_dir);
    c.dataset.labels = resolve(c.dataset.labels, base_dir);
    c.dataset.path = resolve(c.dataset.path, base_dir);
  }
  if (j.contains("context")) {
    const json& x = j["context"];
    only_keys(x, {"strategy", "k", "features", "sidecar"}, "context");
    read(x, "strategy", c.context.strategy, "context");
    if (x.contains("k")) c.context.k = x["k"].get<std::size_t>();
    read(x, "features", c.context.features, "context");
    read(x, "sidecar", c.context.sidecar, "context");
    c.context.sidecar = resolve(c.context.sidecar, base_dir);
  }
  if (j.contains("norms")) {
    for (const auto& n : j["norms"]) c.norms.push_back(parse_norm_kind(n.get<std::string>()));
  } else {
    c.norms = method_order();
  }
  read(j, "k", c.k, "config");
  if (j.contains("model")) {
    const json& m = j["model"];
    if (m.is_string()) {
      c.model = m.get<std::string>();
    } else {
      only_keys(m, {"type", "hidden"}, "model");
      read(m, "type", c.model, "model");
      read(m, "hidden", c.hidden, "model");
    }
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    only_keys(o, {"kind", "lr", "momentum", "beta1", "beta2", "eps", "weight_decay", "schedule", "milestones", "decay"},
              "optimizer");
    std::string kind = "sgd_momentum", schedule = "constant";
    read(o, "kind", kind, "optimizer");
    read(o, "schedule", schedule, "optimizer");
    c.optimizer.kind = parse_optimizer(kind);
    c.optimizer.schedule = parse_schedule(schedule);
    read(o, "lr", c.optimizer.lr, "optimizer");
    read(o, "momentum", c.optimizer.momentum, "optimizer");
    read(o, "beta1", c.optimizer.beta1, "optimizer");
    read(o, "beta2", c.optimizer.beta2, "optimizer");
    read(o, "eps", c.optimizer.adam_eps, "optimizer");
    read(o, "weight_decay", c.optimizer.weight_decay, "optimizer");
    read(o, "milestones", c.optimizer.milestones, "optimizer");
    read(o, "decay", c.optimizer.decay, "optimizer");
  }
  read(j, "epochs", c.epochs, "config");
  read(j, "batch_size", c.batch_size, "config");
  read(j, "seed", c.seed, "config");
  read(j, "out", c.out, "config");
  if (j.contains("mixnorm")) {
    const json& m = j["mixnorm"];
    only_keys(m, {"refresh_every", "em_iters", "buffer_rows"}, "mixnorm");
    read(m, "refresh_every", c.mixnorm.refresh_every, "mixnorm");
    read(m, "em_iters", c.mixnorm.em_iters, "mixnorm");
    read(m, "buffer_rows", c.mixnorm.buffer_rows, "mixnorm");
  }
  read(j, "test_fraction", c.test_fraction, "config");

  // Validation.
  if (c.k == 0) throw ConfigError("k must be >= 1");
  if (c.context.k && *c.context.k == 0) throw ConfigError("context.k must be >= 1");
  if (c.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(c.optimizer.lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
  if (c.test_fraction < 0.0 || c.test_fraction >= 1.0) throw ConfigError("test_fraction must be in [0, 1)");
  if (c.mixnorm.refresh_every == 0 || c.mixnorm.em_iters == 0) throw ConfigError("mixnorm cadence must be positive");
  if (c.norms.empty()) throw ConfigError("norms list is empty");
  if (c.dataset.type == "mnist_idx") {
    require_file(c.dataset.images, "dataset.images");
    require_file(c.dataset.labels, "dataset.labels");
  } else if (c.dataset.type == "csv") {
    require_file(c.dataset.path, "dataset.path");
  } else if (c.dataset.type != "synthetic_gmm") {
    throw ConfigError("unknown dataset type '" + c.dataset.type + "'");
  }
  if (!c.context.sidecar.empty()) require_file(c.context.sidecar, "context.sidecar");
  parse_strategy(c.context.strategy);
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_config(j, fs::path(path).parent_path().string().empty() ? "." : fs::path(path).parent_path().string());
}

json config_to_json(const ExperimentConfig& c) {
  json d = {{"type", c.dataset.type}};
  if (c.dataset.type == "synthetic_gmm") {
    d["k_true"] = c.dataset.k_true;
    d["n"] = c.dataset.n;
    d["dim"] = c.dataset.dim;
    d["separation"] = c.dataset.separation;
  } else if (c.dataset.type == "mnist_idx") {
    d["images"] = c.dataset.images;
    d["labels"] = c.dataset.labels;
    d["subset_n"] = c.dataset.subset_n;
  } else {
    d["path"] = c.dataset.path;
  }
  if (c.dataset.seed) d["seed"] = *c.dataset.seed;
  json ctx = {{"strategy", c.context.strategy}, {"features", c.context.features}};
  if (c.context.k) ctx["k"] = *c.context.k;
  if (!c.context.sidecar.empty()) ctx["sidecar"] = c.context.sidecar;
  json norms = json::array();
  for (auto k : c.norms) norms.push_back(to_string(k));
  const auto& o = c.optimizer;
  return {{"dataset", d},
          {"context", ctx},
          {"norms", norms},
          {"k", c.k},
          {"model", {{"type", c.model}, {"hidden", c.hidden}}},
          {"optimizer",
           {{"kind", o.kind == OptimizerKind::adam ? "adam" : "sgd_momentum"},
            {"lr", o.lr},
            {"momentum", o.momentum},
            {"beta1", o.beta1},
            {"beta2", o.beta2},
            {"eps", o.adam_eps},
            {"weight_decay", o.weight_decay},
            {"schedule", o.schedule == ScheduleKind::constant ? "constant"
                         : o.schedule == ScheduleKind::step   ? "step"
                                                              : "cosine"},
            {"milestones", o.milestones},
            {"decay", o.decay}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"out", c.out},
          {"mixnorm",
           {{"refresh_every", c.mixnorm.refresh_every},
            {"em_iters", c.mixnorm.em_iters},
            {"buffer_rows", c.mixnorm.buffer_rows}}},
          {"test_fraction", c.test_fraction}};
}

RunResult run_experiment(const ExperimentConfig& cfg) {
  RunResult result{cfg.out, {}};
  const fs::path dir(cfg.out);
  fs::create_directories(dir);
  fs::remove(dir / "FAILED");

  const Dataset all = load_dataset(cfg.dataset, cfg.seed);
  const Split split = cfg.test_fraction > 0.0 ? split_dataset(all, cfg.test_fraction, cfg.seed) : Split{all, {}};
  const bool has_test = split.test.size() > 0;

  std::optional<ContextAssignment> contexts;
  std::vector<std::size_t> test_ids;
  bool any_ctx = false;
  for (auto k : cfg.norms) any_ctx = any_ctx || needs_contexts(k);
  if (any_ctx) {
    const ContextSpec spec = context_spec(cfg);
    Rng rng(cfg.seed, 0xc07);
    contexts = assign_contexts(split.train, spec, rng);
    if (has_test) test_ids = assign_heldout(split.test, spec, *contexts);
  }

  json summary = {{"timestamp", utc_timestamp()}, {"config", config_to_json(cfg)}, {"methods", json::object()},
                  {"timing", json::object()}};
  if (contexts) {
    summary["contexts"] = {{"strategy", to_string(contexts->strategy)},
                           {"k", contexts->k},
                           {"lambdas", contexts->lambdas.storage()}};
  }
  std::string failures;

  for (NormKind kind : cfg.norms) {
    const std::string name = to_string(kind);
    json entry;
    try {
      ModelSpec spec = model_spec(cfg, split.train);
      spec.norm = kind;
      spec.mixnorm = cfg.mixnorm;
      spec.k = uses_k(kind) ? cfg.k : 1;
      std::span<const std::size_t> train_ids, held_ids;
      if (needs_contexts(kind)) {
        spec.k = contexts->k;
        spec.lambdas = contexts->lambdas;
        train_ids = contexts->ids;
        held_ids = test_ids;
      }
      Model model(spec, cfg.seed);
      const TrainData train_set{&split.train, train_ids};
      const TrainData test_set{&split.test, held_ids};

      std::vector<MetricRow> rows{{0, "train", evaluate(model, train_set)}};
      if (has_test) rows.push_back({0, "test", evaluate(model, test_set)});
      TrainConfig tc{cfg.epochs, cfg.batch_size, cfg.seed, cfg.optimizer};
      const MetricLog log = train(model, train_set, tc, has_test ? &test_set : nullptr);
      rows.insert(rows.end(), log.rows.begin(), log.rows.end());

      const std::string curves = "curves_" + name + ".csv";
      write_metric_csv((dir / (curves + ".tmp")).string(), rows);
      fs::rename(dir / (curves + ".tmp"), dir / curves);

      const auto last = [&](const std::string& s) {
        for (auto it = rows.rbegin(); it != rows.rend(); ++it)
          if (it->split == s) return it->m;
        return Metrics{};
      };
      entry = {{"status", "ok"},
               {"K", uses_k(kind) ? spec.k : 1},
               {"epochs", cfg.epochs},
               {"initial", metrics_json(rows.front().m)},
               {"final", metrics_json(last("train"))},
               {"curves", curves}};
      if (has_test) entry["test"] = metrics_json(last("test"));
      const double total = std::accumulate(log.epoch_seconds.begin(), log.epoch_seconds.end(), 0.0);
      summary["timing"][name] = {
          {"epoch_seconds", log.epoch_seconds},
          {"mean_epoch_seconds", log.epoch_seconds.empty() ? 0.0 : total / static_cast<double>(log.epoch_seconds.size())}};
    } catch (const std::exception& e) {
      entry = {{"status", "failed"}, {"error", e.what()}};
      result.failed.push_back(name);
      failures += name + ": " + e.what() + "\n";
      write_atomic(dir / "FAILED", failures);
    }
    summary["methods"][name] = entry;
    write_atomic(dir / "summary.json", summary.dump(2) + "\n");
  }
  return result;
}

std::string emit_summary_table(const std::string& report_dir) {
  const fs::path path = fs::path(report_dir) / "summary.json";
  std::ifstream in(path);
  if (!in) throw Error("no summary.json in '" + report_dir + "'");
  json s;
  try {
    in >> s;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  const json& methods = s.at("methods");
  const bool test = [&] {
    for (const auto& [k, v] : methods.items())
      if (v.contains("test")) return true;
    return false;
  }();

  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %3s  %-5s %9s %9s %9s %9s %9s %10s\n", "method", "K", "split", "loss",
                "acc%", "prec%", "rec%", "f1%", "s/epoch");
  out << line << std::string(std::char_traits<char>::length(line) - 1, '-') << '\n';
  std::vector<NormKind> rows{NormKind::none};
  rows.insert(rows.end(), method_order().begin(), method_order().end());
  for (NormKind kind : rows) {
    const std::string key = to_string(kind);
    const char* name = key.c_str();
    if (!methods.contains(name)) continue;
    const json& m = methods[name];
    if (m.value("status", "") != "ok") {
      std::snprintf(line, sizeof line, "%-10s %3s  FAILED: %s\n", name, "-", m.value("error", "").c_str());
      out << line;
      continue;
    }
    const json& r = test ? m.at("test") : m.at("final");
    double secs = 0.0;
    if (s.contains("timing") && s["timing"].contains(name)) secs = s["timing"][name].value("mean_epoch_seconds", 0.0);
    std::snprintf(line, sizeof line, "%-10s %3d  %-5s %9.4f %9.2f %9.2f %9.2f %9.2f %10.3f\n", name,
                  m.at("K").get<int>(), test ? "test" : "train", r.at("loss").get<double>(),
                  100.0 * r.at("accuracy").get<double>(), 100.0 * r.at("precision").get<double>(),
                  100.0 * r.at("recall").get<double>(), 100.0 * r.at("f1").get<double>(), secs);
    out << line;
  }
  return out.str();
}

}  // namespace cnorm
