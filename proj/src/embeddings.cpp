#include "rkt/embeddings.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

#include "rkt/errors.hpp"
#include "rkt/kernels.hpp"

namespace rkt {

Tensor node2vec_embed(const RoadGraph& graph, std::size_t dim, std::uint64_t seed, const Node2VecOptions& opts) {
  const std::size_t n = graph.size();
  if (dim == 0) throw ConfigError("embedding width must be positive");
  Tensor out({n, dim});
  if (n == 0) return out;

  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& e : graph.edges()) {
    if (e.src == e.dst) continue;
    adj[e.src].push_back(e.dst);
    adj[e.dst].push_back(e.src);
  }
  std::size_t isolated = 0;
  for (auto& a : adj) {
    std::sort(a.begin(), a.end());
    a.erase(std::unique(a.begin(), a.end()), a.end());
    isolated += a.empty();
  }
  if (isolated > 0) std::cerr << "node2vec: " << isolated << " isolated road(s) get zero embeddings\n";

  std::mt19937_64 rng(seed);
  std::vector<std::vector<std::size_t>> walks;
  std::vector<double> freq(n, 0.0);
  for (std::size_t w = 0; w < opts.walks_per_node; ++w) {
    for (std::size_t start = 0; start < n; ++start) {
      if (adj[start].empty()) continue;
      std::vector<std::size_t> walk{start};
      while (walk.size() < opts.walk_length) {
        const auto& nb = adj[walk.back()];
        walk.push_back(nb[std::uniform_int_distribution<std::size_t>(0, nb.size() - 1)(rng)]);
      }
      for (auto v : walk) freq[v] += 1.0;
      walks.push_back(std::move(walk));
    }
  }
  if (walks.empty()) return out;

  for (auto& f : freq) f = std::pow(f, 0.75);
  std::discrete_distribution<std::size_t> noise(freq.begin(), freq.end());

  std::vector<double> in(n * dim);
  std::vector<double> ctx(n * dim, 0.0);
  std::uniform_real_distribution<double> u(-0.5 / static_cast<double>(dim), 0.5 / static_cast<double>(dim));
  for (auto& v : in) v = u(rng);

  std::size_t total = 0;
  for (const auto& w : walks) total += w.size();
  total *= opts.epochs;
  std::size_t seen = 0;
  std::vector<double> grad(dim);
  auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };

  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::vector<std::size_t> order(walks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    for (auto wi : order) {
      const auto& walk = walks[wi];
      for (std::size_t i = 0; i < walk.size(); ++i, ++seen) {
        const double lr = std::max(opts.lr * 1e-4, opts.lr * (1.0 - static_cast<double>(seen) / static_cast<double>(total)));
        const std::size_t lo = i >= opts.window ? i - opts.window : 0;
        const std::size_t hi = std::min(walk.size() - 1, i + opts.window);
        for (std::size_t j = lo; j <= hi; ++j) {
          if (j == i) continue;
          double* vin = &in[walk[i] * dim];
          std::fill(grad.begin(), grad.end(), 0.0);
          for (std::size_t s = 0; s <= opts.negatives; ++s) {
            const std::size_t target = s == 0 ? walk[j] : noise(rng);
            if (s > 0 && target == walk[j]) continue;
            const double label = s == 0 ? 1.0 : 0.0;
            double* vout = &ctx[target * dim];
            double dot = 0.0;
            for (std::size_t d = 0; d < dim; ++d) dot += vin[d] * vout[d];
            const double g = (label - sig(dot)) * lr;
            for (std::size_t d = 0; d < dim; ++d) {
              grad[d] += g * vout[d];
              vout[d] += g * vin[d];
            }
          }
          for (std::size_t d = 0; d < dim; ++d) vin[d] += grad[d];
        }
      }
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    if (adj[v].empty()) continue;
    std::copy_n(&in[v * dim], dim, out.data().data() + v * dim);
  }
  return out;
}

std::array<double, kTemporalDim> temporal_onehot(Timestamp ts) {
  std::array<double, kTemporalDim> v{};
  v[static_cast<std::size_t>(hour_of_day(ts))] = 1.0;
  v[24 + static_cast<std::size_t>(day_of_week(ts))] = 1.0;
  return v;
}

Tensor temporal_features(const std::vector<std::vector<Timestamp>>& windows) {
  if (windows.empty() || windows.front().empty()) throw ShapeError("temporal_features: no timestamps");
  const std::size_t T = windows.front().size();
  Tensor out({windows.size(), T, kTemporalDim});
  for (std::size_t b = 0; b < windows.size(); ++b) {
    if (windows[b].size() != T) throw ShapeError("temporal_features: windows of different length");
    for (std::size_t t = 0; t < T; ++t) {
      const auto v = temporal_onehot(windows[b][t]);
      std::copy(v.begin(), v.end(), out.data().data() + (b * T + t) * kTemporalDim);
    }
  }
  return out;
}

Tensor cell_geo_features(const RegionGrid& grid, const GeoOptions& opts) {
  const std::size_t n = grid.cells();
  const std::size_t f = opts.sat ? grid.sat_dim() : 0;
  const std::size_t width = 2 + (opts.poi ? kPoiCategories.size() : 0) + f;
  Tensor out({n, width});
  std::vector<LatLon> centers(n);
  double lat_lo = 1e300, lat_hi = -1e300, lon_lo = 1e300, lon_hi = -1e300;
  for (std::size_t c = 0; c < n; ++c) {
    centers[c] = grid.cell_center(c);
    lat_lo = std::min(lat_lo, centers[c].lat);
    lat_hi = std::max(lat_hi, centers[c].lat);
    lon_lo = std::min(lon_lo, centers[c].lon);
    lon_hi = std::max(lon_hi, centers[c].lon);
  }
  auto scaled = [](double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 0.0; };
  for (std::size_t c = 0; c < n; ++c) {
    double* row = out.data().data() + c * width;
    std::size_t k = 0;
    row[k++] = scaled(centers[c].lat, lat_lo, lat_hi);
    row[k++] = scaled(centers[c].lon, lon_lo, lon_hi);
    if (opts.poi) {
      for (double p : grid.poi.at(c)) row[k++] = std::log1p(p);
    }
    for (std::size_t i = 0; i < f; ++i) row[k++] = grid.sat[c][i];
  }
  return out;
}

void declare_ste(ParamStore& ps, std::mt19937_64& rng, std::size_t d_emb, std::size_t geo_dim, std::size_t D) {
  declare_fcn2(ps, rng, "ste.temporal", kTemporalDim, D, D);
  declare_fcn2(ps, rng, "ste.road", d_emb, D, D);
  if (geo_dim > 0) declare_fcn2(ps, rng, "ste.cell", geo_dim, D, D);
}

namespace {

Var combine(Var spatial, Var temporal) {
  // spatial [N, D], temporal [B, T, D] -> [B, T, N, D]
  const Shape& ts = temporal.shape();
  return add(reshape(temporal, {ts[0], ts[1], 1, ts[2]}), spatial);
}

}  // namespace

Var build_ste_x(ParamStore& ps, Var e_x, Var tfeat) {
  return combine(fcn2(ps, "ste.road", e_x), fcn2(ps, "ste.temporal", tfeat));
}

Var build_ste_z(ParamStore& ps, Var geo, Var tfeat) {
  return combine(fcn2(ps, "ste.cell", geo), fcn2(ps, "ste.temporal", tfeat));
}

}  // namespace rkt
