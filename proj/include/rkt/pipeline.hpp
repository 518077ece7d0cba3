#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "json.hpp"
#include "rkt/model.hpp"
#include "rkt/synth.hpp"
#include "rkt/train.hpp"

namespace rkt {

/// Everything a run needs besides the command line. Every key is optional;
/// unknown keys are rejected.
struct RunConfig {
  ModelConfig model;
  std::string data;                // dataset directory
  std::string out;                 // run directory
  std::optional<SynthSpec> synth;  // generate the dataset instead of reading `data`
  double missing_frac = 0.0;       // injected into generated data
  std::size_t train_stride = 1;
  std::optional<double> stop_train_mae;
};

nlohmann::ordered_json to_json(const RunConfig& c);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig read_run_config(const std::filesystem::path& path);

// Reads `cfg.data`, or generates from `cfg.synth` (and writes the files to
// out/data when `out` is non-empty).
LoadedData obtain_dataset(const RunConfig& cfg, const std::filesystem::path& out = {});

struct RunSummary {
  TrainResult train;
  MetricsReport val;
  MetricsReport test;
  MetricsReport ha_test;
};

/// Trains one model and evaluates it. When `out` is non-empty, writes
/// config.json, checkpoint.json, history.csv, report.json and report.txt there.
RunSummary run_experiment(const RunConfig& cfg, const PreparedData& d, const std::filesystem::path& out,
                          std::ostream* log = nullptr);

nlohmann::ordered_json to_json(const RunSummary& s, const ModelConfig& cfg);

// Restores a checkpoint against a dataset: normalization comes from the
// checkpoint, so the model sees inputs scaled exactly as during training.
struct LoadedRun {
  PreparedData data;
  std::optional<Model> model;
};
LoadedRun load_run(const Checkpoint& ck, LoadedData dataset);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace rkt
