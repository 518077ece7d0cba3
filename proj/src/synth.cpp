#include "rkt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "rkt/errors.hpp"

namespace rkt {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kNearM = 500.0;

// Divides by the integer 1/step so the result is the double nearest the
// decimal value and prints short.
double round_to(double v, double step) {
  const double inv = std::round(1.0 / step);
  return std::round(v * inv) / inv;
}

// Poisson means of the 10 POI categories for commercial / residential cells.
constexpr PoiCounts kCommercialPoi = {30, 40, 15, 8, 25, 2, 1, 6, 4, 12};
constexpr PoiCounts kResidentialPoi = {4, 8, 3, 5, 3, 2, 3, 1, 1, 1};

}  // namespace

void SynthSpec::validate() const {
  if (n_roads < 3) throw ConfigError("synth: need at least 3 roads for the ring");
  if (n_h < 3 || n_w < 3) throw ConfigError("synth: grid too small to contain roads (need at least 3 x 3 cells)");
  if (steps < min_steps) {
    throw ConfigError("synth: steps must be >= " + std::to_string(min_steps) + " (10 windows of P + Q)");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("synth: alpha must lie in [0, 1]");
  if (lag == 0 || lag >= steps) throw ConfigError("synth: lag must be in [1, steps)");
  if (!(noise >= 0.0)) throw ConfigError("synth: noise must be >= 0");
  if (!(commercial_frac >= 0.0 && commercial_frac <= 1.0)) throw ConfigError("synth: commercial_frac must lie in [0, 1]");
  if (!(event_rate >= 0.0)) throw ConfigError("synth: event_rate must be >= 0");
  if (!(cell_size_m > 0.0)) throw ConfigError("synth: cell_size_m must be positive");
  parse_timestamp(start);
}

nlohmann::ordered_json to_json(const SynthSpec& s) {
  nlohmann::ordered_json j;
  j["n_roads"] = s.n_roads;
  j["n_h"] = s.n_h;
  j["n_w"] = s.n_w;
  j["steps"] = s.steps;
  j["seed"] = s.seed;
  j["alpha"] = s.alpha;
  j["lag"] = s.lag;
  j["coupling_sign"] = s.coupling_sign;
  j["noise"] = s.noise;
  j["commercial_frac"] = s.commercial_frac;
  j["event_rate"] = s.event_rate;
  j["sat_dim"] = s.sat_dim;
  j["cell_size_m"] = s.cell_size_m;
  j["origin_lat"] = s.origin_lat;
  j["origin_lon"] = s.origin_lon;
  j["start"] = s.start;
  j["min_steps"] = s.min_steps;
  return j;
}

SynthSpec synth_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth spec must be a JSON object");
  SynthSpec s;
  const auto defaults = to_json(s);
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!defaults.contains(it.key())) throw ConfigError("unknown synth spec key '" + it.key() + "'");
  }
  try {
    auto get = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    get("n_roads", s.n_roads);
    get("n_h", s.n_h);
    get("n_w", s.n_w);
    get("steps", s.steps);
    get("seed", s.seed);
    get("alpha", s.alpha);
    get("lag", s.lag);
    get("coupling_sign", s.coupling_sign);
    get("noise", s.noise);
    get("commercial_frac", s.commercial_frac);
    get("event_rate", s.event_rate);
    get("sat_dim", s.sat_dim);
    get("cell_size_m", s.cell_size_m);
    get("origin_lat", s.origin_lat);
    get("origin_lon", s.origin_lon);
    get("start", s.start);
    get("min_steps", s.min_steps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth spec: ") + e.what());
  }
  s.validate();
  return s;
}

SynthResult generate(const SynthSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  SynthResult out;
  RegionGrid& grid = out.grid;
  grid.n_h = spec.n_h;
  grid.n_w = spec.n_w;
  grid.cell_size_m = spec.cell_size_m;
  grid.origin_lat = spec.origin_lat;
  grid.origin_lon = spec.origin_lon;
  const std::size_t nz = grid.cells();
  const std::size_t nx = spec.n_roads;
  const std::size_t T = spec.steps;
  const double height = static_cast<double>(spec.n_h) * spec.cell_size_m;
  const double width = static_cast<double>(spec.n_w) * spec.cell_size_m;

  // Cell archetypes, POI counts and image features.
  out.commercial.resize(nz);
  for (std::size_t c = 0; c < nz; ++c) out.commercial[c] = unit(rng) < spec.commercial_frac;
  grid.poi.resize(nz);
  for (std::size_t c = 0; c < nz; ++c) {
    const PoiCounts& mean = out.commercial[c] ? kCommercialPoi : kResidentialPoi;
    for (std::size_t k = 0; k < mean.size(); ++k) grid.poi[c][k] = static_cast<double>(std::poisson_distribution<int>(mean[k])(rng));
  }
  if (spec.sat_dim > 0) {
    std::vector<double> loading(spec.sat_dim);
    for (auto& l : loading) l = gauss(rng);
    grid.sat.assign(nz, std::vector<double>(spec.sat_dim));
    for (std::size_t c = 0; c < nz; ++c)
      for (std::size_t k = 0; k < spec.sat_dim; ++k)
        grid.sat[c][k] = round_to((out.commercial[c] ? 1.0 : -1.0) * loading[k] + 0.3 * gauss(rng), 1e-4);
  }

  // Roads on an ellipse inside the grid: a ring plus chords to the opposite side.
  std::vector<RoadNode> nodes(nx);
  for (std::size_t r = 0; r < nx; ++r) {
    const double ang = kTwoPi * static_cast<double>(r) / static_cast<double>(nx);
    const double north = height / 2 + 0.35 * height * std::sin(ang);
    const double east = width / 2 + 0.35 * width * std::cos(ang);
    LatLon p = grid.offset_to_latlon(north, east);
    p.lat = round_to(p.lat, 1e-7);
    p.lon = round_to(p.lon, 1e-7);
    nodes[r] = {static_cast<std::int64_t>(100 + r), p};
  }
  std::vector<RoadGraph::EdgeById> edges;
  auto link = [&](std::size_t a, std::size_t b) {
    const double d = std::max(1.0, round_to(haversine_m(nodes[a].pos, nodes[b].pos), 0.1));
    edges.push_back({nodes[a].road_id, nodes[b].road_id, d});
    edges.push_back({nodes[b].road_id, nodes[a].road_id, d});
  };
  for (std::size_t r = 0; r < nx; ++r) link(r, (r + 1) % nx);
  for (std::size_t r = 0; r + nx / 2 < nx; r += 3) {
    if (nx / 2 > 1) link(r, r + nx / 2);
  }
  out.graph = RoadGraph(nodes, edges);

  // Population: daily cycle by archetype, weekday scaling, event surges, noise.
  TrafficDataset& data = out.data;
  const Timestamp t0 = parse_timestamp(spec.start);
  data.timestamps.resize(T);
  for (std::size_t t = 0; t < T; ++t) data.timestamps[t] = t0 + static_cast<Timestamp>(t) * kSecondsPerHour;
  data.z = Tensor({T, nz});
  for (std::size_t t = 0; t < T; ++t) {
    const double h = hour_of_day(data.timestamps[t]);
    const double wk = day_of_week(data.timestamps[t]) < 5 ? 1.0 : 0.6;
    for (std::size_t c = 0; c < nz; ++c) {
      data.z[t * nz + c] = out.commercial[c] ? 100.0 * wk * (1.0 + 0.6 * std::cos(kTwoPi * (h - 14.0) / 24.0))
                                             : 80.0 * (2.0 - wk) * (1.0 + 0.4 * std::cos(kTwoPi * (h - 2.0) / 24.0));
    }
  }
  const int events = std::poisson_distribution<int>(spec.event_rate * static_cast<double>(T))(rng);
  for (int e = 0; e < events; ++e) {
    const std::size_t start = std::uniform_int_distribution<std::size_t>(0, T - 1)(rng);
    const std::size_t dur = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
    const double en = unit(rng) * height;
    const double ee = unit(rng) * width;
    const double amp = 100.0 + 150.0 * unit(rng);
    constexpr double radius = 250.0;
    for (std::size_t c = 0; c < nz; ++c) {
      const auto xy = grid.cell_xy_m(c);
      const double d2 = (xy[0] - en) * (xy[0] - en) + (xy[1] - ee) * (xy[1] - ee);
      const double w = amp * std::exp(-d2 / (2 * radius * radius));
      for (std::size_t t = start; t < std::min(T, start + dur); ++t) data.z[t * nz + c] += w;
    }
  }
  for (auto& v : data.z.data()) v = round_to(std::max(0.0, v + 5.0 * gauss(rng)), 0.01);

  // Local population of each road and its standardized version.
  const Tensor dist = road_cell_distances(out.graph, grid);
  out.local_pop = Tensor({T, nx});
  std::vector<double> mean(nx, 0.0), sd(nx, 0.0);
  for (std::size_t r = 0; r < nx; ++r) {
    std::vector<std::size_t> near;
    for (std::size_t c = 0; c < nz; ++c)
      if (dist[r * nz + c] <= kNearM) near.push_back(c);
    if (near.empty()) throw ConfigError("synth: a road has no cell within 500 m");
    for (std::size_t t = 0; t < T; ++t) {
      double s = 0.0;
      for (auto c : near) s += data.z[t * nz + c];
      out.local_pop[t * nx + r] = s / static_cast<double>(near.size());
      mean[r] += out.local_pop[t * nx + r];
    }
    mean[r] /= static_cast<double>(T);
    for (std::size_t t = 0; t < T; ++t) sd[r] += std::pow(out.local_pop[t * nx + r] - mean[r], 2);
    sd[r] = std::sqrt(sd[r] / static_cast<double>(T));
    if (sd[r] < 1e-12) sd[r] = 1.0;
  }

  // Speeds: half-day cycle + per-road offset + lagged coupling + noise.
  std::vector<double> offset(nx);
  for (auto& o : offset) o = -5.0 + 10.0 * unit(rng);
  data.x = Tensor({T, nx});
  for (std::size_t t = 0; t < T; ++t) {
    const double h = hour_of_day(data.timestamps[t]);
    const std::size_t src = t >= spec.lag ? t - spec.lag : 0;
    for (std::size_t r = 0; r < nx; ++r) {
      const double zl = (out.local_pop[src * nx + r] - mean[r]) / sd[r];
      const double v = 45.0 + 8.0 * std::cos(2.0 * kTwoPi * (h - 8.0) / 24.0) + offset[r] +
                       spec.coupling_sign * spec.alpha * 8.0 * zl + spec.noise * gauss(rng);
      data.x[t * nx + r] = round_to(std::clamp(v, 1.0, 80.0), 0.01);
    }
  }
  data.x_missing.assign(T * nx, 0);
  data.z_missing.assign(T * nz, 0);
  return out;
}

void inject_missing(TrafficDataset& d, double frac, std::uint64_t seed) {
  if (!(frac >= 0.0 && frac < 0.5)) throw ConfigError("missing fraction must lie in [0, 0.5)");
  const std::size_t n = d.x.size();
  const auto count = static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
  if (d.x_missing.size() != n) d.x_missing.assign(n, 0);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::mt19937_64 rng(seed);
  // Partial Fisher-Yates: the first `count` positions are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
    d.x_missing[idx[i]] = 1;
    d.x[idx[i]] = 0.0;
  }
}

}  // namespace rkt
