#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "rkt/autodiff.hpp"
#include "rkt/params.hpp"

namespace rkt {

// Parameters are declared once into a ParamStore under a name prefix and then
// read back through the tape by the matching apply function.

// name.W (in x out, Glorot), name.b (out, zeros).
void declare_affine(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t in, std::size_t out);
Var affine(ParamStore& ps, const std::string& name, Var x, bool relu_out = false);

// Two affine layers: name.l1 (in -> hidden), name.l2 (hidden -> out).
void declare_fcn2(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t out);
// relu(relu(x W1 + b1) W2 + b2); with relu_out = false the second layer is left linear.
Var fcn2(ParamStore& ps, const std::string& name, Var x, bool relu_out = true);

struct AttentionConfig {
  std::size_t K = 8;
  std::size_t d_h = 8;

  std::size_t D() const { return K * d_h; }
  void validate() const;
};

// f1/f2/f3 map the query/key/value inputs to D = K*d_h (one ReLU-affine layer
// each, split into K heads of width d_h); fo is ReLU-affine D -> D.
void declare_mh_attention(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t d_q,
                          std::size_t d_k, std::size_t d_v, const AttentionConfig& cfg);

/// Multi-head attention over axis -2. xq: [..., N_Q, d_q], xk: [..., N_P, d_k],
/// xv: [..., N_P, d_v], leading axes shared. `mask`, when given, is added to
/// the scaled scores and must broadcast to [..., K, N_Q, N_P]. When `weights`
/// is non-null it receives the softmax weights [..., K, N_Q, N_P].
Var mh_attention(ParamStore& ps, const std::string& name, Var xq, Var xk, Var xv, const AttentionConfig& cfg,
                 const Var* mask = nullptr, Tensor* weights = nullptr);

// ---------------------------------------------------------------------------
// Regional adjacency and convolution

struct RegionalAdjacency {
  Tensor r;       // N_Z x N_Z Pearson correlations
  Tensor a;       // thresholded, distance-weighted
  Tensor a_norm;  // row-normalized; all-zero rows stay zero
  double lambda_r = 0.6;
  double sigma_dist = 0.0;
};

// Pearson correlation between the columns of a T x N series. Columns with zero
// variance correlate 0 with everything, 1 with themselves.
Tensor pearson_columns(const Tensor& series);

// r * exp(-(d / sigma_dist)^2) when r > lambda_r, else 0.
double regional_weight(double r, double d, double sigma_dist, double lambda_r);

// `span` is the T x N_Z population window the correlations are computed on;
// `coords` are planar cell positions in meters. sigma_dist is the population
// std over all unordered pairs of distinct cells.
RegionalAdjacency build_regional_adjacency(const Tensor& span, const std::vector<std::array<double, 2>>& coords,
                                           double lambda_r);

// name.W (D x D).
void declare_dynamic_conv(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t D);
// relu(adj H W) for H: [..., N_Z, D], adj: [N_Z, N_Z] constant.
Var dynamic_conv(ParamStore& ps, const std::string& name, Var adj, Var h);

// Neighbor table of a k x k same-size convolution on an n_h x n_w row-major
// grid; -1 marks zero padding.
std::vector<std::int64_t> grid_conv_table(std::size_t n_h, std::size_t n_w, std::size_t k);
// name.W (k*k*d_in x d_out), name.b.
void declare_grid_conv(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t k, std::size_t d_in,
                       std::size_t d_out);
// relu(conv(H)) for H: [..., n_h*n_w, d_in].
Var grid_conv(ParamStore& ps, const std::string& name, Var h, const std::vector<std::int64_t>& table, std::size_t k);

// ---------------------------------------------------------------------------
// Spatio-temporal blocks. Hidden states are laid out [B, T, N, D].

// Self-attention across N at each time step on (H || STE).
Var spatial_attention(ParamStore& ps, const std::string& name, Var h, Var ste, const AttentionConfig& cfg,
                      Tensor* weights = nullptr);
// Self-attention across T at each location on (H || STE).
Var temporal_attention(ParamStore& ps, const std::string& name, Var h, Var ste, const AttentionConfig& cfg,
                       Tensor* weights = nullptr);

enum class GateKind { Relu, Logistic };

// name.W1, name.W2 (D x D), name.b (D).
void declare_gated_fusion(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t D);
// g * hs + (1 - g) * ht with g = act(hs W1 + ht W2 + b).
Var gated_fusion(ParamStore& ps, const std::string& name, Var hs, Var ht, GateKind kind);

/// M[k, r, c] = -d[r, c]^2 / (2 sigma[r, k]^2) with sigma = exp(s).
/// dist: [N_X, N_Z] meters (constant), s: [N_X, K]. Returns [K, N_X, N_Z].
Var gaussian_mask(Var dist, Var s);

/// Cross-attention from roads to cells at each time step. ste_x: [B, T, N_X, D]
/// (query); h_z, ste_z: [B, T, N_Z, D] (key = h_z || ste_z, value = h_z);
/// mask: [K, N_X, N_Z] or null. Returns [B, T, N_X, D].
Var bipartite_transform(ParamStore& ps, const std::string& name, Var ste_x, Var h_z, Var ste_z, const Var* mask,
                        const AttentionConfig& cfg, Tensor* weights = nullptr);

/// Cross-attention from a length-Q query sequence to a length-P key/value
/// sequence at each location. query: [B, Q, N, d_q], key: [B, P, N, d_k],
/// value: [B, P, N, d_v]. Returns [B, Q, N, D].
Var temporal_transform(ParamStore& ps, const std::string& name, Var query, Var key, Var value,
                       const AttentionConfig& cfg, Tensor* weights = nullptr);

}  // namespace rkt
