#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "rkt/tensor.hpp"
#include "rkt/timeutil.hpp"

namespace rkt {

struct LatLon {
  double lat = 0.0;
  double lon = 0.0;
};

inline constexpr double kEarthRadiusM = 6371008.8;

// Great-circle distance on a sphere of radius kEarthRadiusM.
double haversine_m(LatLon a, LatLon b);

struct RoadNode {
  std::int64_t road_id = 0;
  LatLon pos;
};

// Edge endpoints are indices into RoadGraph::nodes.
struct RoadEdge {
  std::size_t src = 0;
  std::size_t dst = 0;
  double distance_m = 0.0;
};

/// Road network. Nodes are kept sorted by road_id; that order defines the
/// road axis of every tensor.
class RoadGraph {
 public:
  struct EdgeById {
    std::int64_t src;
    std::int64_t dst;
    double distance_m;
  };

  RoadGraph() = default;
  RoadGraph(std::vector<RoadNode> nodes, const std::vector<EdgeById>& edges);

  std::size_t size() const { return nodes_.size(); }
  const std::vector<RoadNode>& nodes() const { return nodes_; }
  const std::vector<RoadEdge>& edges() const { return edges_; }
  std::size_t index_of(std::int64_t road_id) const;
  bool contains(std::int64_t road_id) const;

 private:
  std::vector<RoadNode> nodes_;
  std::vector<RoadEdge> edges_;
};

inline constexpr std::array<std::string_view, 10> kPoiCategories = {
    "shopping", "food", "cafe", "beauty", "work", "hospital", "school", "art_entertainment", "lodging", "nightlife"};

using PoiCounts = std::array<double, kPoiCategories.size()>;

/// Rectangular lattice of square cells. Cell c = row * n_w + col; row 0 is the
/// southern edge and the origin is the south-west corner.
struct RegionGrid {
  std::size_t n_h = 0;
  std::size_t n_w = 0;
  double cell_size_m = 150.0;
  double origin_lat = 0.0;
  double origin_lon = 0.0;
  std::vector<PoiCounts> poi;              // one per cell
  std::vector<std::vector<double>> sat;    // empty, or one length-F vector per cell

  std::size_t cells() const { return n_h * n_w; }
  std::size_t sat_dim() const { return sat.empty() ? 0 : sat.front().size(); }
  LatLon cell_center(std::size_t c) const;
  // Local planar position of a cell center in meters from the origin.
  std::array<double, 2> cell_xy_m(std::size_t c) const;
  // Inverse of the local planar projection used by cell_center.
  LatLon offset_to_latlon(double north_m, double east_m) const;
  void validate() const;
};

struct NormStats {
  std::vector<double> x_mean, x_std;
  std::vector<double> z_mean, z_std;
};

// Partition boundaries: train [0, train_end), val [train_end, val_end),
// test [val_end, total).
struct Split {
  std::size_t train_end = 0;
  std::size_t val_end = 0;
  std::size_t total = 0;
};

enum class Partition { Train, Val, Test };
std::string_view partition_name(Partition p);

/// Aligned hourly road-speed and regional-population series.
struct TrafficDataset {
  std::vector<Timestamp> timestamps;
  Tensor x;                           // T x N_X, km/h
  Tensor z;                           // T x N_Z
  std::vector<std::uint8_t> x_missing;  // T x N_X, 1 where the source value was absent
  std::vector<std::uint8_t> z_missing;

  std::size_t steps() const { return timestamps.size(); }
  std::size_t roads() const { return x.dim(1); }
  std::size_t cells() const { return z.dim(1); }
};

struct LoadedData {
  RoadGraph graph;
  RegionGrid grid;
  TrafficDataset data;
};

/// Reads nodes.csv, edges.csv, speeds.csv, population.csv, grid.json and the
/// optional poi.csv / satfeat.csv from `dir`. Missing values are recorded in
/// the masks and left as 0 in the series.
LoadedData load_dataset(const std::filesystem::path& dir);

// Writes the same file set load_dataset reads. Missing entries are written as
// empty fields.
void write_dataset(const std::filesystem::path& dir, const RoadGraph& graph, const RegionGrid& grid,
                   const TrafficDataset& data);

/// Forward fill from the previous valid value, else backward fill from the
/// next one, column by column on a T x N series.
Tensor fill_missing(const Tensor& series, std::span<const std::uint8_t> missing);

struct SplitRatios {
  double train = 0.7;
  double val = 0.1;
  double test = 0.2;
};

// Chronological boundaries: train_end = floor(0.7 T), test keeps the last
// floor(0.2 T) steps, validation takes what lies between.
Split split_boundaries(std::size_t steps, SplitRatios ratios = {});

// split_boundaries, but throws DataError when any partition cannot hold one
// window of P + Q steps.
Split split_series(std::size_t steps, std::size_t P, std::size_t Q, SplitRatios ratios = {});

// Per-column mean and population std over rows [0, train_end).
NormStats fit_zscore(const Tensor& x, const Tensor& z, std::size_t train_end);
Tensor apply_zscore(const Tensor& series, std::span<const double> mean, std::span<const double> std);
Tensor invert_zscore(const Tensor& series, std::span<const double> mean, std::span<const double> std);

std::pair<std::size_t, std::size_t> partition_range(const Split& split, Partition p);

// Start indices of every window of P + Q steps fully inside the partition.
std::vector<std::size_t> window_starts(const Split& split, Partition p, std::size_t P, std::size_t Q);

/// Filled, split and normalized dataset ready for windowing.
struct PreparedData {
  RoadGraph graph;
  RegionGrid grid;
  TrafficDataset raw;  // filled, original units
  Split split;
  NormStats stats;
  Tensor xn;  // T x N_X normalized
  Tensor zn;  // T x N_Z normalized
};

PreparedData prepare(LoadedData loaded, std::size_t P, std::size_t Q, SplitRatios ratios = {});

struct Sample {
  Tensor x_hist;  // P x N_X
  Tensor z_hist;  // P x N_Z
  Tensor y;       // Q x N_X
  std::vector<Timestamp> times;  // P + Q
  std::size_t start = 0;
};

Sample make_sample(const PreparedData& d, std::size_t start, std::size_t P, std::size_t Q);

// N_X x N_Z haversine distances from each road's node to each cell center.
Tensor road_cell_distances(const RoadGraph& graph, const RegionGrid& grid);

}  // namespace rkt
