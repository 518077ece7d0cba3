// rkt: generate data, train, evaluate and compare forecaster variants.
// stdout carries results only; progress and errors go to stderr.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rkt/errors.hpp"
#include "rkt/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rkt;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct SynthArgs {
  std::string spec, out;
  double missing = 0.0;
  std::optional<std::uint64_t> seed;
};

struct TrainArgs {
  std::string config, data, out, variant;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
};

struct EvalArgs {
  std::string ckpt, data, split = "test", baseline;
  bool stratify = false;
  bool table = false;
  std::size_t P = 12, Q = 3;
};

struct AblateArgs {
  std::vector<std::string> variants;
  std::string config, data, out;
  std::optional<std::uint64_t> seed;
};

struct ReportArgs {
  std::string history, report;
};

nlohmann::json read_json(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw DataError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

int cmd_synth(const SynthArgs& a) {
  SynthSpec spec = synth_spec_from_json(read_json(a.spec));
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  SynthResult r = generate(spec);
  if (a.missing > 0.0) inject_missing(r.data, a.missing, spec.seed + 1);
  const std::size_t dropped = std::count(r.data.x_missing.begin(), r.data.x_missing.end(), 1);
  write_dataset(a.out, r.graph, r.grid, r.data);
  nlohmann::ordered_json j;
  j["out"] = a.out;
  j["roads"] = r.data.roads();
  j["cells"] = r.data.cells();
  j["steps"] = r.data.steps();
  j["missing"] = dropped;
  std::cout << j.dump() << "\n";
  return kOk;
}

RunConfig load_config(const std::string& path, const std::string& data, std::optional<std::uint64_t> seed) {
  RunConfig cfg = path.empty() ? RunConfig{} : read_run_config(path);
  if (!data.empty()) cfg.data = data;
  if (seed) cfg.model.seed = *seed;
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  RunConfig cfg = load_config(a.config, a.data, a.seed);
  if (!a.out.empty()) cfg.out = a.out;
  if (!a.variant.empty()) cfg.model.variant = parse_variant(a.variant);
  if (a.epochs) cfg.model.epochs = *a.epochs;
  cfg.model.validate();
  if (cfg.out.empty()) throw ConfigError("no output directory: pass --out or set \"out\"");
  fs::create_directories(cfg.out);
  PreparedData d = prepare(obtain_dataset(cfg, cfg.out), cfg.model.P, cfg.model.Q);
  RunSummary s = run_experiment(cfg, d, cfg.out, &std::cerr);
  std::cout << to_json(s, cfg.model).dump() << "\n";
  return kOk;
}

Partition parse_split(const std::string& s) {
  if (s == "val") return Partition::Val;
  if (s == "test") return Partition::Test;
  throw ConfigError("split must be val or test, got '" + s + "'");
}

int cmd_eval(const EvalArgs& a) {
  const Partition part = parse_split(a.split);
  if (a.ckpt.empty() && a.baseline.empty()) throw ConfigError("nothing to evaluate: pass --ckpt or --baseline");
  if (!a.baseline.empty() && a.baseline != "ha") throw ConfigError("unknown baseline '" + a.baseline + "'");

  std::optional<LoadedRun> run;
  PreparedData plain;
  std::size_t P = a.P, Q = a.Q;
  if (!a.ckpt.empty()) {
    Checkpoint ck = read_checkpoint(a.ckpt);
    run = load_run(ck, load_dataset(a.data));
    P = ck.config.P;
    Q = ck.config.Q;
  } else {
    plain = prepare(load_dataset(a.data), P, Q);
  }
  const PreparedData& d = run ? run->data : plain;

  std::vector<std::pair<std::string, Predictions>> preds;
  if (run) preds.emplace_back(std::string(variant_name(run->model->config().variant)), predict(*run->model, d, part));
  if (a.baseline == "ha") preds.emplace_back("HA", ha_predict(fit_ha(d), d, part, P, Q));

  std::optional<PoiStrata> strata;
  if (a.stratify) strata = poi_strata(d.graph, road_poi_density(d.graph, d.grid));

  std::vector<std::pair<std::string, MetricsReport>> rows;
  nlohmann::ordered_json out;
  out["split"] = a.split;
  for (const auto& [name, p] : preds) {
    nlohmann::ordered_json e;
    MetricsReport all = compute_metrics(p);
    e["all"] = to_json(all);
    rows.emplace_back(name, all);
    if (strata) {
      MetricsReport hi = compute_metrics(p, strata->high);
      MetricsReport lo = compute_metrics(p, strata->low);
      e["high_poi"] = to_json(hi);
      e["low_poi"] = to_json(lo);
      rows.emplace_back(name + " (high POI)", hi);
      rows.emplace_back(name + " (low POI)", lo);
    }
    out[name] = e;
  }
  if (a.table) {
    std::cout << format_table(rows);
  } else {
    std::cout << out.dump() << "\n";
  }
  return kOk;
}

int cmd_ablate(const AblateArgs& a) {
  RunConfig base = load_config(a.config, a.data, a.seed);
  const fs::path out = a.out.empty() ? fs::path(base.out) : fs::path(a.out);
  if (out.empty()) throw ConfigError("no output directory: pass --out or set \"out\"");
  std::vector<Variant> variants;
  for (const auto& v : a.variants) variants.push_back(parse_variant(v));
  if (variants.empty()) variants = all_variants();
  fs::create_directories(out);
  PreparedData d = prepare(obtain_dataset(base, out), base.model.P, base.model.Q);

  std::vector<std::pair<std::string, MetricsReport>> rows;
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  std::optional<MetricsReport> ha;
  for (Variant v : variants) {
    RunConfig cfg = base;
    cfg.model.variant = v;
    cfg.model.validate();
    const std::string name(variant_name(v));
    cfg.out = (out / name).string();
    std::cerr << "== " << name << "\n";
    RunSummary s = run_experiment(cfg, d, cfg.out, &std::cerr);
    rows.emplace_back(name, s.test);
    summary.push_back(to_json(s, cfg.model));
    ha = s.ha_test;
  }
  rows.emplace_back("HA", *ha);
  write_text(out / "report.json", summary.dump(2) + "\n");
  write_text(out / "report.txt", format_table(rows));
  std::cout << summary.dump() << "\n";
  return kOk;
}

int cmd_report(const ReportArgs& a) {
  const auto hist = read_history_csv(a.history);
  if (hist.empty()) throw DataError(a.history + ": no epochs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < hist.size(); ++i) {
    if (hist[i].val_mae < hist[best].val_mae) best = i;
  }
  std::cout << "epochs " << hist.size() << "\n";
  std::cout << "first train_mae " << hist.front().train_mae << "\n";
  std::cout << "last train_mae " << hist.back().train_mae << "\n";
  std::cout << "best epoch " << hist[best].epoch << " val_mae " << hist[best].val_mae << "\n";
  if (!a.report.empty()) {
    nlohmann::json r = read_json(a.report);
    if (r.is_object() && r.contains("test")) {
      std::cout << "test average MAE " << r["test"]["average"]["mae"] << " RMSE " << r["test"]["average"]["rmse"]
                << " MAPE " << r["test"]["average"]["mape"] << "\n";
    }
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Road traffic forecasting with regional context"};
  app.require_subcommand(1);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--spec", sa.spec, "Generator spec (JSON)")->required()->check(CLI::ExistingFile);
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--missing", sa.missing, "Fraction of speed entries to drop")->check(CLI::Range(0.0, 0.4999));
  synth->add_option("--seed", sa.seed, "Override the spec seed");

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train one model and evaluate it");
  trn->add_option("--config", ta.config, "Run config (JSON)")->check(CLI::ExistingFile);
  trn->add_option("--data", ta.data, "Dataset directory");
  trn->add_option("--out", ta.out, "Run directory");
  trn->add_option("--seed", ta.seed, "Model seed");
  trn->add_option("--variant", ta.variant, "Model variant");
  trn->add_option("--epochs", ta.epochs, "Epoch cap");

  EvalArgs ea;
  auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint or a baseline");
  evl->add_option("--ckpt", ea.ckpt, "Checkpoint file")->check(CLI::ExistingFile);
  evl->add_option("--data", ea.data, "Dataset directory")->required();
  evl->add_option("--split", ea.split, "val or test")->check(CLI::IsMember({"val", "test"}));
  evl->add_option("--baseline", ea.baseline, "Also evaluate a baseline")->check(CLI::IsMember({"ha"}));
  evl->add_flag("--stratify-poi", ea.stratify, "Report high and low POI-density roads separately");
  evl->add_flag("--table", ea.table, "Print a text table instead of JSON");
  evl->add_option("--history", ea.P, "History length for baseline-only runs");
  evl->add_option("--horizon", ea.Q, "Horizon for baseline-only runs");

  AblateArgs aa;
  auto* abl = app.add_subcommand("ablate", "Train several variants on one dataset");
  abl->add_option("--variant", aa.variants, "Variants (default: all)");
  abl->add_option("--config", aa.config, "Run config (JSON)")->check(CLI::ExistingFile);
  abl->add_option("--data", aa.data, "Dataset directory");
  abl->add_option("--out", aa.out, "Output directory");
  abl->add_option("--seed", aa.seed, "Model seed");

  ReportArgs ra;
  auto* rep = app.add_subcommand("report", "Summarize a training history");
  rep->add_option("--history", ra.history, "history.csv")->required()->check(CLI::ExistingFile);
  rep->add_option("--report", ra.report, "report.json")->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e, std::cerr, std::cerr);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(sa);
    if (*trn) return cmd_train(ta);
    if (*evl) return cmd_eval(ea);
    if (*abl) return cmd_ablate(aa);
    if (*rep) return cmd_report(ra);
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
