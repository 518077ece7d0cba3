#include "rkt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>

#include "csv.hpp"
#include "json.hpp"
#include "rkt/errors.hpp"

namespace rkt {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

void check_latlon(LatLon p, const std::string& what) {
  if (!std::isfinite(p.lat) || !std::isfinite(p.lon) || p.lat < -90 || p.lat > 90 || p.lon < -180 || p.lon > 180) {
    throw DataError(what + ": coordinate out of range");
  }
}

std::vector<Timestamp> read_time_column(const csv::Table& t) {
  if (t.header.empty() || t.header[0] != "timestamp") {
    throw DataError(t.source + ": first column must be 'timestamp'");
  }
  std::vector<Timestamp> ts;
  ts.reserve(t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    ts.push_back(parse_timestamp(t.rows[r][0]));
    if (r == 0) continue;
    const Timestamp step = ts[r] - ts[r - 1];
    if (step <= 0) {
      throw DataError(t.source + ": timestamps not strictly increasing at " + t.rows[r][0]);
    }
    if (step > kSecondsPerHour) {
      throw DataError(t.source + ": timestamp gap of more than 1 hour before " + t.rows[r][0]);
    }
    if (step != kSecondsPerHour) {
      throw DataError(t.source + ": timestamps must be hourly, got a " + std::to_string(step) + " s step at " +
                      t.rows[r][0]);
    }
  }
  if (ts.empty()) throw DataError(t.source + ": no rows");
  return ts;
}

// Reads value columns into `out` (T x N) following `column_for`: column_for[j]
// is the csv column holding series j.
void read_values(const csv::Table& t, const std::vector<std::size_t>& column_for, Tensor& out,
                 std::vector<std::uint8_t>& missing) {
  const std::size_t n = column_for.size();
  out = Tensor({t.rows.size(), n});
  missing.assign(t.rows.size() * n, 0);
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::string& f = t.rows[r][column_for[j]];
      if (f.empty()) {
        missing[r * n + j] = 1;
        continue;
      }
      const double v = csv::to_double(f, t, r);
      if (!std::isfinite(v)) throw DataError(t.source + ": non-finite value in row " + std::to_string(r + 1));
      out[r * n + j] = v;
    }
  }
}

}  // namespace

double haversine_m(LatLon a, LatLon b) {
  const double p1 = a.lat * kDeg;
  const double p2 = b.lat * kDeg;
  const double dp = (b.lat - a.lat) * kDeg;
  const double dl = (b.lon - a.lon) * kDeg;
  const double h = std::sin(dp / 2) * std::sin(dp / 2) + std::cos(p1) * std::cos(p2) * std::sin(dl / 2) * std::sin(dl / 2);
  return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

// ---------------------------------------------------------------------------

RoadGraph::RoadGraph(std::vector<RoadNode> nodes, const std::vector<EdgeById>& edges) : nodes_(std::move(nodes)) {
  std::sort(nodes_.begin(), nodes_.end(), [](const RoadNode& a, const RoadNode& b) { return a.road_id < b.road_id; });
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    if (nodes_[i].road_id == nodes_[i - 1].road_id) {
      throw DataError("duplicate road_id " + std::to_string(nodes_[i].road_id));
    }
  }
  for (const auto& n : nodes_) check_latlon(n.pos, "road " + std::to_string(n.road_id));
  edges_.reserve(edges.size());
  for (const auto& e : edges) {
    if (!contains(e.src) || !contains(e.dst)) {
      throw DataError("edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " references an unknown road");
    }
    if (!(e.distance_m > 0.0) || !std::isfinite(e.distance_m)) {
      throw DataError("edge " + std::to_string(e.src) + "->" + std::to_string(e.dst) + " has non-positive distance");
    }
    edges_.push_back({index_of(e.src), index_of(e.dst), e.distance_m});
  }
}

bool RoadGraph::contains(std::int64_t road_id) const {
  return std::binary_search(nodes_.begin(), nodes_.end(), RoadNode{road_id, {}},
                            [](const RoadNode& a, const RoadNode& b) { return a.road_id < b.road_id; });
}

std::size_t RoadGraph::index_of(std::int64_t road_id) const {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), road_id,
                             [](const RoadNode& a, std::int64_t id) { return a.road_id < id; });
  if (it == nodes_.end() || it->road_id != road_id) throw DataError("unknown road_id " + std::to_string(road_id));
  return static_cast<std::size_t>(it - nodes_.begin());
}

// ---------------------------------------------------------------------------

LatLon RegionGrid::offset_to_latlon(double north_m, double east_m) const {
  const double lat = origin_lat + north_m / kEarthRadiusM / kDeg;
  const double lon = origin_lon + east_m / (kEarthRadiusM * std::cos(origin_lat * kDeg)) / kDeg;
  return {lat, lon};
}

std::array<double, 2> RegionGrid::cell_xy_m(std::size_t c) const {
  const std::size_t row = c / n_w;
  const std::size_t col = c % n_w;
  return {(static_cast<double>(row) + 0.5) * cell_size_m, (static_cast<double>(col) + 0.5) * cell_size_m};
}

LatLon RegionGrid::cell_center(std::size_t c) const {
  const auto xy = cell_xy_m(c);
  return offset_to_latlon(xy[0], xy[1]);
}

void RegionGrid::validate() const {
  if (n_h == 0 || n_w == 0) throw DataError("grid extents must be positive");
  if (!(cell_size_m > 0.0)) throw DataError("grid cell_size_m must be positive");
  check_latlon({origin_lat, origin_lon}, "grid origin");
  if (poi.size() != cells()) throw DataError("POI table does not cover every grid cell");
  for (const auto& p : poi) {
    for (double v : p) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw DataError("POI counts must be finite and >= 0");
    }
  }
  if (!sat.empty()) {
    if (sat.size() != cells()) throw DataError("satellite features do not cover every grid cell");
    for (const auto& f : sat) {
      if (f.size() != sat.front().size()) throw DataError("satellite feature length differs between cells");
    }
  }
}

std::string_view partition_name(Partition p) {
  switch (p) {
    case Partition::Train: return "train";
    case Partition::Val: return "validation";
    case Partition::Test: return "test";
  }
  return "?";
}

// ---------------------------------------------------------------------------

LoadedData load_dataset(const std::filesystem::path& dir) {
  LoadedData out;

  // Grid geometry.
  {
    std::ifstream in(dir / "grid.json");
    if (!in) throw DataError("cannot open " + (dir / "grid.json").string());
    nlohmann::json j;
    try {
      in >> j;
      out.grid.n_h = j.at("n_h").get<std::size_t>();
      out.grid.n_w = j.at("n_w").get<std::size_t>();
      out.grid.cell_size_m = j.value("cell_size_m", 150.0);
      out.grid.origin_lat = j.at("origin_lat").get<double>();
      out.grid.origin_lon = j.at("origin_lon").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("grid.json: ") + e.what());
    }
    if (out.grid.n_h == 0 || out.grid.n_w == 0) throw DataError("grid.json: non-rectangular grid (zero extent)");
  }
  const std::size_t n_z = out.grid.cells();

  // Road graph.
  {
    const auto nodes_t = csv::read(dir / "nodes.csv");
    const std::size_t ci = nodes_t.column("road_id"), la = nodes_t.column("lat"), lo = nodes_t.column("lon");
    std::vector<RoadNode> nodes;
    for (std::size_t r = 0; r < nodes_t.rows.size(); ++r) {
      nodes.push_back({csv::to_int(nodes_t.rows[r][ci], nodes_t, r),
                       {csv::to_double(nodes_t.rows[r][la], nodes_t, r), csv::to_double(nodes_t.rows[r][lo], nodes_t, r)}});
    }
    if (nodes.empty()) throw DataError("nodes.csv: no roads");
    std::vector<RoadGraph::EdgeById> edges;
    if (std::filesystem::exists(dir / "edges.csv")) {
      const auto edges_t = csv::read(dir / "edges.csv");
      const std::size_t s = edges_t.column("src"), d = edges_t.column("dst"), m = edges_t.column("distance_m");
      for (std::size_t r = 0; r < edges_t.rows.size(); ++r) {
        edges.push_back({csv::to_int(edges_t.rows[r][s], edges_t, r), csv::to_int(edges_t.rows[r][d], edges_t, r),
                         csv::to_double(edges_t.rows[r][m], edges_t, r)});
      }
    } else {
      throw DataError("cannot open " + (dir / "edges.csv").string());
    }
    out.graph = RoadGraph(std::move(nodes), edges);
  }

  // POI and satellite features.
  out.grid.poi.assign(n_z, PoiCounts{});
  if (std::filesystem::exists(dir / "poi.csv")) {
    const auto t = csv::read(dir / "poi.csv");
    const std::size_t ci = t.column("cell_index");
    std::array<std::size_t, kPoiCategories.size()> cols{};
    for (std::size_t k = 0; k < kPoiCategories.size(); ++k) cols[k] = t.column(kPoiCategories[k]);
    std::vector<bool> seen(n_z, false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto c = csv::to_int(t.rows[r][ci], t, r);
      if (c < 0 || static_cast<std::size_t>(c) >= n_z) throw DataError("poi.csv: cell_index outside the grid");
      if (seen[static_cast<std::size_t>(c)]) throw DataError("poi.csv: duplicate cell_index " + std::to_string(c));
      seen[static_cast<std::size_t>(c)] = true;
      for (std::size_t k = 0; k < cols.size(); ++k) out.grid.poi[static_cast<std::size_t>(c)][k] = csv::to_double(t.rows[r][cols[k]], t, r);
    }
  }
  if (std::filesystem::exists(dir / "satfeat.csv")) {
    const auto t = csv::read(dir / "satfeat.csv");
    const std::size_t ci = t.column("cell_index");
    const std::size_t f = t.header.size() - 1;
    std::vector<std::size_t> cols;
    for (std::size_t k = 0; k < f; ++k) cols.push_back(t.column("f" + std::to_string(k)));
    out.grid.sat.assign(n_z, std::vector<double>(f, 0.0));
    std::vector<bool> seen(n_z, false);
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
      const auto c = csv::to_int(t.rows[r][ci], t, r);
      if (c < 0 || static_cast<std::size_t>(c) >= n_z) throw DataError("satfeat.csv: cell_index outside the grid");
      seen[static_cast<std::size_t>(c)] = true;
      for (std::size_t k = 0; k < f; ++k) out.grid.sat[static_cast<std::size_t>(c)][k] = csv::to_double(t.rows[r][cols[k]], t, r);
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) throw DataError("satfeat.csv: missing cells");
  }
  out.grid.validate();

  // Road speeds.
  const auto speeds = csv::read(dir / "speeds.csv");
  out.data.timestamps = read_time_column(speeds);
  {
    const std::size_t n_x = out.graph.size();
    std::vector<std::size_t> column_for(n_x, SIZE_MAX);
    for (std::size_t c = 1; c < speeds.header.size(); ++c) {
      std::int64_t id = 0;
      try {
        id = csv::to_int(speeds.header[c], speeds, 0);
      } catch (const DataError&) {
        throw DataError("speeds.csv: unknown road_id column '" + speeds.header[c] + "'");
      }
      if (!out.graph.contains(id)) throw DataError("speeds.csv: unknown road_id column '" + speeds.header[c] + "'");
      const std::size_t idx = out.graph.index_of(id);
      if (column_for[idx] != SIZE_MAX) throw DataError("speeds.csv: duplicate column for road_id " + speeds.header[c]);
      column_for[idx] = c;
    }
    for (std::size_t i = 0; i < n_x; ++i) {
      if (column_for[i] == SIZE_MAX) {
        throw DataError("speeds.csv: no column for road_id " + std::to_string(out.graph.nodes()[i].road_id));
      }
    }
    read_values(speeds, column_for, out.data.x, out.data.x_missing);
  }

  // Regional population.
  const auto pop = csv::read(dir / "population.csv");
  if (pop.header.size() - 1 != n_z) {
    throw DataError("population.csv: " + std::to_string(pop.header.size() - 1) + " cell columns for a non-rectangular " +
                    std::to_string(out.grid.n_h) + "x" + std::to_string(out.grid.n_w) + " grid");
  }
  if (read_time_column(pop) != out.data.timestamps) {
    throw DataError("population.csv: timestamps are not aligned with speeds.csv");
  }
  {
    std::vector<std::size_t> column_for(n_z, SIZE_MAX);
    for (std::size_t c = 1; c < pop.header.size(); ++c) {
      std::int64_t cell = -1;
      try {
        cell = csv::to_int(pop.header[c], pop, 0);
      } catch (const DataError&) {
      }
      if (cell < 0 || static_cast<std::size_t>(cell) >= n_z || column_for[static_cast<std::size_t>(cell)] != SIZE_MAX) {
        throw DataError("population.csv: column '" + pop.header[c] + "' is not a distinct cell index of the grid");
      }
      column_for[static_cast<std::size_t>(cell)] = c;
    }
    read_values(pop, column_for, out.data.z, out.data.z_missing);
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const RoadGraph& graph, const RegionGrid& grid,
                   const TrafficDataset& data) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw DataError("cannot write " + (dir / name).string());
    return f;
  };
  using csv::format_double;
  {
    auto f = open("nodes.csv");
    f << "road_id,lat,lon\n";
    for (const auto& n : graph.nodes()) f << n.road_id << ',' << format_double(n.pos.lat) << ',' << format_double(n.pos.lon) << '\n';
  }
  {
    auto f = open("edges.csv");
    f << "src,dst,distance_m\n";
    for (const auto& e : graph.edges()) {
      f << graph.nodes()[e.src].road_id << ',' << graph.nodes()[e.dst].road_id << ',' << format_double(e.distance_m) << '\n';
    }
  }
  {
    nlohmann::ordered_json j;
    j["n_h"] = grid.n_h;
    j["n_w"] = grid.n_w;
    j["cell_size_m"] = grid.cell_size_m;
    j["origin_lat"] = grid.origin_lat;
    j["origin_lon"] = grid.origin_lon;
    auto f = open("grid.json");
    f << j.dump(2) << '\n';
  }
  {
    auto f = open("poi.csv");
    f << "cell_index";
    for (auto c : kPoiCategories) f << ',' << c;
    f << '\n';
    for (std::size_t c = 0; c < grid.cells(); ++c) {
      f << c;
      for (double v : grid.poi[c]) f << ',' << format_double(v);
      f << '\n';
    }
  }
  if (!grid.sat.empty()) {
    auto f = open("satfeat.csv");
    f << "cell_index";
    for (std::size_t k = 0; k < grid.sat_dim(); ++k) f << ",f" << k;
    f << '\n';
    for (std::size_t c = 0; c < grid.cells(); ++c) {
      f << c;
      for (double v : grid.sat[c]) f << ',' << format_double(v);
      f << '\n';
    }
  }
  auto write_series = [&](const char* name, const Tensor& s, const std::vector<std::uint8_t>& miss, auto header_of) {
    auto f = open(name);
    const std::size_t n = s.dim(1);
    f << "timestamp";
    for (std::size_t j = 0; j < n; ++j) f << ',' << header_of(j);
    f << '\n';
    for (std::size_t t = 0; t < data.timestamps.size(); ++t) {
      f << format_timestamp(data.timestamps[t]);
      for (std::size_t j = 0; j < n; ++j) {
        f << ',';
        if (!miss.empty() && miss[t * n + j]) continue;
        f << format_double(s[t * n + j]);
      }
      f << '\n';
    }
  };
  write_series("speeds.csv", data.x, data.x_missing, [&](std::size_t j) { return std::to_string(graph.nodes()[j].road_id); });
  write_series("population.csv", data.z, data.z_missing, [](std::size_t j) { return std::to_string(j); });
}

// ---------------------------------------------------------------------------

Tensor fill_missing(const Tensor& series, std::span<const std::uint8_t> missing) {
  if (series.rank() != 2 || missing.size() != series.size()) {
    throw ShapeError("fill_missing expects a T x N series with a matching mask");
  }
  const std::size_t T = series.dim(0);
  const std::size_t N = series.dim(1);
  Tensor out = series;
  for (std::size_t j = 0; j < N; ++j) {
    std::size_t first_valid = T;
    for (std::size_t t = 0; t < T; ++t) {
      if (!missing[t * N + j]) {
        first_valid = t;
        break;
      }
    }
    if (first_valid == T) throw DataError("series column " + std::to_string(j) + " has no valid values");
    double last = series[first_valid * N + j];
    for (std::size_t t = 0; t < T; ++t) {
      if (missing[t * N + j]) {
        out[t * N + j] = last;  // before first_valid this is the backward fill
      } else {
        last = series[t * N + j];
      }
    }
  }
  return out;
}

Split split_boundaries(std::size_t steps, SplitRatios r) {
  if (r.train <= 0 || r.val <= 0 || r.test <= 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw ConfigError("split ratios must be positive and sum to 1");
  }
  const double T = static_cast<double>(steps);
  Split s;
  s.total = steps;
  s.train_end = static_cast<std::size_t>(std::floor(T * r.train + 1e-9));
  const auto test_len = static_cast<std::size_t>(std::floor(T * r.test + 1e-9));
  s.val_end = steps - test_len;
  return s;
}

Split split_series(std::size_t steps, std::size_t P, std::size_t Q, SplitRatios r) {
  const Split s = split_boundaries(steps, r);
  const std::size_t need = P + Q;
  std::string short_parts;
  auto check = [&](Partition p) {
    const auto [a, b] = partition_range(s, p);
    if (b < a + need) {
      if (!short_parts.empty()) short_parts += ", ";
      short_parts += std::string(partition_name(p)) + " (" + std::to_string(b - a) + " < " + std::to_string(need) + ")";
    }
  };
  check(Partition::Train);
  check(Partition::Val);
  check(Partition::Test);
  if (!short_parts.empty()) {
    throw DataError("partition too short for one P+Q window: " + short_parts);
  }
  return s;
}

NormStats fit_zscore(const Tensor& x, const Tensor& z, std::size_t train_end) {
  auto fit = [train_end](const Tensor& s, std::vector<double>& mean, std::vector<double>& sd) {
    const std::size_t N = s.dim(1);
    if (train_end == 0 || train_end > s.dim(0)) throw DataError("training partition is empty or out of range");
    mean.assign(N, 0.0);
    sd.assign(N, 0.0);
    for (std::size_t j = 0; j < N; ++j) {
      double m = 0.0;
      for (std::size_t t = 0; t < train_end; ++t) m += s[t * N + j];
      m /= static_cast<double>(train_end);
      double v = 0.0;
      for (std::size_t t = 0; t < train_end; ++t) v += (s[t * N + j] - m) * (s[t * N + j] - m);
      v /= static_cast<double>(train_end);
      mean[j] = m;
      const double st = std::sqrt(v);
      // Constant training series: fall back to unit scale so the series maps to 0.
      sd[j] = st < 1e-8 ? 1.0 : st;
    }
  };
  NormStats ns;
  fit(x, ns.x_mean, ns.x_std);
  fit(z, ns.z_mean, ns.z_std);
  return ns;
}

Tensor apply_zscore(const Tensor& s, std::span<const double> mean, std::span<const double> sd) {
  const std::size_t N = s.dim(-1);
  if (mean.size() != N || sd.size() != N) throw ShapeError("normalization stats do not match series width");
  Tensor out = s;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (s[i] - mean[i % N]) / sd[i % N];
  return out;
}

Tensor invert_zscore(const Tensor& s, std::span<const double> mean, std::span<const double> sd) {
  const std::size_t N = s.dim(-1);
  if (mean.size() != N || sd.size() != N) throw ShapeError("normalization stats do not match series width");
  Tensor out = s;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s[i] * sd[i % N] + mean[i % N];
  return out;
}

std::pair<std::size_t, std::size_t> partition_range(const Split& s, Partition p) {
  switch (p) {
    case Partition::Train: return {0, s.train_end};
    case Partition::Val: return {s.train_end, s.val_end};
    case Partition::Test: return {s.val_end, s.total};
  }
  return {0, 0};
}

std::vector<std::size_t> window_starts(const Split& split, Partition p, std::size_t P, std::size_t Q) {
  const auto [a, b] = partition_range(split, p);
  std::vector<std::size_t> out;
  for (std::size_t s = a; s + P + Q <= b; ++s) out.push_back(s);
  return out;
}

PreparedData prepare(LoadedData loaded, std::size_t P, std::size_t Q, SplitRatios ratios) {
  PreparedData d;
  d.graph = std::move(loaded.graph);
  d.grid = std::move(loaded.grid);
  d.raw = std::move(loaded.data);
  d.raw.x = fill_missing(d.raw.x, d.raw.x_missing);
  d.raw.z = fill_missing(d.raw.z, d.raw.z_missing);
  d.split = split_series(d.raw.steps(), P, Q, ratios);
  d.stats = fit_zscore(d.raw.x, d.raw.z, d.split.train_end);
  d.xn = apply_zscore(d.raw.x, d.stats.x_mean, d.stats.x_std);
  d.zn = apply_zscore(d.raw.z, d.stats.z_mean, d.stats.z_std);
  return d;
}

Sample make_sample(const PreparedData& d, std::size_t start, std::size_t P, std::size_t Q) {
  if (start + P + Q > d.raw.steps()) throw DataError("window exceeds the series");
  const std::size_t nx = d.raw.roads();
  const std::size_t nz = d.raw.cells();
  Sample s;
  s.start = start;
  s.x_hist = Tensor({P, nx});
  s.z_hist = Tensor({P, nz});
  s.y = Tensor({Q, nx});
  std::copy_n(d.xn.data().data() + start * nx, P * nx, s.x_hist.data().data());
  std::copy_n(d.zn.data().data() + start * nz, P * nz, s.z_hist.data().data());
  std::copy_n(d.xn.data().data() + (start + P) * nx, Q * nx, s.y.data().data());
  s.times.assign(d.raw.timestamps.begin() + static_cast<std::ptrdiff_t>(start),
                 d.raw.timestamps.begin() + static_cast<std::ptrdiff_t>(start + P + Q));
  return s;
}

Tensor road_cell_distances(const RoadGraph& graph, const RegionGrid& grid) {
  Tensor d({graph.size(), grid.cells()});
  for (std::size_t r = 0; r < graph.size(); ++r) {
    for (std::size_t c = 0; c < grid.cells(); ++c) {
      d.at({r, c}) = haversine_m(graph.nodes()[r].pos, grid.cell_center(c));
    }
  }
  return d;
}

}  // namespace rkt
