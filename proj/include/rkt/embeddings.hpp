#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <vector>

#include "rkt/autodiff.hpp"
#include "rkt/data.hpp"
#include "rkt/params.hpp"

namespace rkt {

struct Node2VecOptions {
  std::size_t walks_per_node = 10;
  std::size_t walk_length = 20;
  std::size_t window = 5;
  std::size_t negatives = 5;
  std::size_t epochs = 5;
  double lr = 0.025;
};

/// Skip-gram with negative sampling over uniform random walks on the
/// symmetrized road graph. Returns N_X x dim; isolated nodes get zero rows.
Tensor node2vec_embed(const RoadGraph& graph, std::size_t dim, std::uint64_t seed, const Node2VecOptions& opts = {});

inline constexpr std::size_t kTemporalDim = 24 + 7;

// Ones at [hour] and [24 + weekday], Monday = 0.
std::array<double, kTemporalDim> temporal_onehot(Timestamp ts);
// B x T x 31 from B windows of T timestamps each.
Tensor temporal_features(const std::vector<std::vector<Timestamp>>& windows);

struct GeoOptions {
  bool poi = true;
  bool sat = true;
};

// N_Z x (2 + 10 + F): lat/lon min-max scaled over the cell centers,
// log(1 + POI count), raw satellite features. Dropped groups shrink the width.
Tensor cell_geo_features(const RegionGrid& grid, const GeoOptions& opts = {});

// ste.temporal (31 -> D), ste.road (d_emb -> D) and, when geo_dim > 0,
// ste.cell (geo_dim -> D); all two-layer, hidden width D.
void declare_ste(ParamStore& ps, std::mt19937_64& rng, std::size_t d_emb, std::size_t geo_dim, std::size_t D);

// e_x: [N_X, d_emb], tfeat: [B, T, 31] -> [B, T, N_X, D].
Var build_ste_x(ParamStore& ps, Var e_x, Var tfeat);
// geo: [N_Z, geo_dim], tfeat: [B, T, 31] -> [B, T, N_Z, D].
Var build_ste_z(ParamStore& ps, Var geo, Var tfeat);

}  // namespace rkt
