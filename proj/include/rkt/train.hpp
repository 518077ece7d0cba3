#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "rkt/data.hpp"
#include "rkt/model.hpp"

namespace rkt {

/// Stacked windows. x: [B, P, N_X], z: [B, P, N_Z], tfeat: [B, P+Q, 31],
/// y: [B, Q, N_X] normalized targets, weight: 1 where the target was observed.
struct Batch {
  Tensor x, z, tfeat, y, weight;
  std::vector<std::size_t> starts;
};

Batch make_batch(const PreparedData& d, std::span<const std::size_t> starts, std::size_t P, std::size_t Q);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_mae = 0.0;  // normalized, mean over the epoch's batches
  double val_mae = 0.0;    // km/h; NaN when validation is off
};

struct TrainOptions {
  // Explicit training windows; empty means every training-partition window.
  std::vector<std::size_t> train_starts;
  // Keep every k-th training window (1 = all).
  std::size_t train_stride = 1;
  // Evaluate validation MAE each epoch, stop early and restore the best epoch.
  bool validate = true;
  // Stop once an epoch's training MAE falls below this.
  std::optional<double> stop_train_mae;
  std::ostream* log = nullptr;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_val_mae = 0.0;
};

// Adam on the masked MAE, seeded shuffling, early stopping on validation MAE.
// patience = 0 stops after the first epoch.
TrainResult train(Model& m, const PreparedData& d, const TrainOptions& opt = {});

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  double mae = 0.0;
  double rmse = 0.0;
  double mape = 0.0;  // percent
  std::size_t count = 0;
  std::size_t mape_count = 0;
};

struct MetricsReport {
  std::vector<Metrics> horizon;  // one per forecast step
  Metrics average;               // pooled over every horizon
};

inline constexpr double kMapeFloor = 1.0;  // km/h

/// Predictions in original units. All tensors are [W, Q, N_X].
struct Predictions {
  Tensor yhat, y, weight;
  std::vector<std::size_t> starts;
};

// Metrics over entries with weight != 0, optionally restricted to `roads`.
MetricsReport compute_metrics(const Predictions& p, std::span<const std::size_t> roads = {});

Predictions predict(Model& m, const PreparedData& d, Partition part, std::size_t batch_size = 32);
MetricsReport evaluate(Model& m, const PreparedData& d, Partition part);

// Historical average by (hour of day, day of week, road) over observed
// training values; buckets without data fall back to the road's training mean.
struct HaTable {
  Tensor bucket_mean;  // 168 x N_X, NaN where empty
  std::vector<double> road_mean;
  double predict(Timestamp ts, std::size_t road) const;
};

HaTable fit_ha(const PreparedData& d);
Predictions ha_predict(const HaTable& ha, const PreparedData& d, Partition part, std::size_t P, std::size_t Q);

// Mean total POI count over cells within `radius_m` of each road.
std::vector<double> road_poi_density(const RoadGraph& graph, const RegionGrid& grid, double radius_m = 500.0);

struct PoiStrata {
  std::vector<std::size_t> high, low;  // road indices
};

// Top and bottom floor(top_frac * N_X) roads by density; ties go to the lower
// road_id first. Requires at least 4 roads.
PoiStrata poi_strata(const RoadGraph& graph, std::span<const double> density, double top_frac = 0.3);

// ---------------------------------------------------------------------------
// Reports

nlohmann::ordered_json to_json(const Metrics& m);
nlohmann::ordered_json to_json(const MetricsReport& r);

// Aligned text table: one row per named report, columns per horizon MAE,
// RMSE, MAPE and their averages.
std::string format_table(const std::vector<std::pair<std::string, MetricsReport>>& rows);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);
std::vector<EpochRecord> read_history_csv(const std::filesystem::path& path);

}  // namespace rkt
