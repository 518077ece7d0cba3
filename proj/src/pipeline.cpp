#include "rkt/pipeline.hpp"

#include <fstream>

#include "rkt/errors.hpp"

namespace rkt {

nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["model"] = to_json(c.model);
  j["data"] = c.data;
  j["out"] = c.out;
  j["synth"] = c.synth ? to_json(*c.synth) : nlohmann::ordered_json(nullptr);
  j["missing_frac"] = c.missing_frac;
  j["train_stride"] = c.train_stride;
  j["stop_train_mae"] = c.stop_train_mae ? nlohmann::ordered_json(*c.stop_train_mae) : nlohmann::ordered_json(nullptr);
  return j;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  static const char* const kKeys[] = {"model", "data", "out", "synth", "missing_frac", "train_stride", "stop_train_mae"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(std::begin(kKeys), std::end(kKeys), it.key()) == std::end(kKeys)) {
      throw ConfigError("unknown run config key '" + it.key() + "'");
    }
  }
  RunConfig c;
  try {
    if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
    if (j.contains("data")) c.data = j.at("data").get<std::string>();
    if (j.contains("out")) c.out = j.at("out").get<std::string>();
    if (j.contains("synth") && !j.at("synth").is_null()) c.synth = synth_spec_from_json(j.at("synth"));
    if (j.contains("missing_frac")) c.missing_frac = j.at("missing_frac").get<double>();
    if (j.contains("train_stride")) c.train_stride = j.at("train_stride").get<std::size_t>();
    if (j.contains("stop_train_mae") && !j.at("stop_train_mae").is_null()) {
      c.stop_train_mae = j.at("stop_train_mae").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  if (c.train_stride == 0) throw ConfigError("train_stride must be >= 1");
  if (!(c.missing_frac >= 0.0 && c.missing_frac < 0.5)) throw ConfigError("missing_frac must lie in [0, 0.5)");
  return c;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path.string());
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

LoadedData obtain_dataset(const RunConfig& cfg, const std::filesystem::path& out) {
  if (!cfg.data.empty()) return load_dataset(cfg.data);
  if (!cfg.synth) throw ConfigError("no dataset: give a data directory or a synth spec");
  SynthResult r = generate(*cfg.synth);
  if (cfg.missing_frac > 0.0) inject_missing(r.data, cfg.missing_frac, cfg.synth->seed + 1);
  if (!out.empty()) write_dataset(out / "data", r.graph, r.grid, r.data);
  return LoadedData{std::move(r.graph), std::move(r.grid), std::move(r.data)};
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << text;
}

nlohmann::ordered_json to_json(const RunSummary& s, const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["variant"] = std::string(variant_name(cfg.variant));
  j["epochs_run"] = s.train.history.size();
  j["best_epoch"] = s.train.best_epoch;
  j["val"] = to_json(s.val);
  j["test"] = to_json(s.test);
  j["ha_test"] = to_json(s.ha_test);
  return j;
}

RunSummary run_experiment(const RunConfig& cfg, const PreparedData& d, const std::filesystem::path& out,
                          std::ostream* log) {
  Model m(cfg.model, make_context(d, cfg.model));
  TrainOptions opt;
  opt.train_stride = cfg.train_stride;
  opt.stop_train_mae = cfg.stop_train_mae;
  opt.log = log;
  RunSummary s;
  s.train = train(m, d, opt);
  s.val = evaluate(m, d, Partition::Val);
  s.test = evaluate(m, d, Partition::Test);
  s.ha_test = compute_metrics(ha_predict(fit_ha(d), d, Partition::Test, cfg.model.P, cfg.model.Q));
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    write_text(out / "config.json", to_json(cfg).dump(2) + "\n");
    save_checkpoint(out / "checkpoint.json", m, d.stats);
    write_history_csv(out / "history.csv", s.train.history);
    write_text(out / "report.json", to_json(s, cfg.model).dump(2) + "\n");
    write_text(out / "report.txt",
               format_table({{std::string(variant_name(cfg.model.variant)), s.test}, {"HA", s.ha_test}}));
  }
  return s;
}

LoadedRun load_run(const Checkpoint& ck, LoadedData dataset) {
  LoadedRun r;
  r.data = prepare(std::move(dataset), ck.config.P, ck.config.Q);
  const std::size_t nx = r.data.raw.roads();
  const std::size_t nz = r.data.raw.cells();
  if (ck.stats.x_mean.size() != nx || ck.stats.z_mean.size() != nz) {
    throw DataError("checkpoint was trained on " + std::to_string(ck.stats.x_mean.size()) + " roads and " +
                    std::to_string(ck.stats.z_mean.size()) + " cells; dataset has " + std::to_string(nx) + " and " +
                    std::to_string(nz));
  }
  r.data.stats = ck.stats;
  r.data.xn = apply_zscore(r.data.raw.x, ck.stats.x_mean, ck.stats.x_std);
  r.data.zn = apply_zscore(r.data.raw.z, ck.stats.z_mean, ck.stats.z_std);
  r.model.emplace(ck.config, make_context(r.data, ck.config, &ck.e_x));
  load_into(*r.model, ck);
  return r;
}

}  // namespace rkt
