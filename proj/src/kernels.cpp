#include "rkt/kernels.hpp"

#include <cmath>
#include <numeric>

#include "rkt/errors.hpp"

namespace rkt {

namespace {

Var P(ParamStore& ps, Var like, const std::string& name) { return like.tape->param(ps, name); }

// Swap axes 1 and 2 of a rank-4 tensor.
Var swap12(Var x) { return permute(x, {0, 2, 1, 3}); }

}  // namespace

void declare_affine(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t in, std::size_t out) {
  ps.add(name + ".W", glorot_uniform({in, out}, in, out, rng));
  ps.add(name + ".b", Tensor({out}));
}

Var affine(ParamStore& ps, const std::string& name, Var x, bool relu_out) {
  const Tensor& w = ps.value(name + ".W");
  if (x.value().dim(-1) != w.dim(0)) {
    throw ShapeError(name + ": input width " + std::to_string(x.value().dim(-1)) + " does not match weight " +
                     to_string(w.shape()));
  }
  return linear(x, P(ps, x, name + ".W"), P(ps, x, name + ".b"), relu_out);
}

void declare_fcn2(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t in, std::size_t hidden,
                  std::size_t out) {
  declare_affine(ps, rng, name + ".l1", in, hidden);
  declare_affine(ps, rng, name + ".l2", hidden, out);
}

Var fcn2(ParamStore& ps, const std::string& name, Var x, bool relu_out) {
  return affine(ps, name + ".l2", affine(ps, name + ".l1", x, true), relu_out);
}

void AttentionConfig::validate() const {
  if (K == 0 || d_h == 0) throw ConfigError("attention needs K >= 1 and d_h >= 1");
}

void declare_mh_attention(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t d_q,
                          std::size_t d_k, std::size_t d_v, const AttentionConfig& cfg) {
  cfg.validate();
  const std::size_t D = cfg.D();
  declare_affine(ps, rng, name + ".f1", d_q, D);
  declare_affine(ps, rng, name + ".f2", d_k, D);
  declare_affine(ps, rng, name + ".f3", d_v, D);
  declare_affine(ps, rng, name + ".fo", D, D);
}

Var mh_attention(ParamStore& ps, const std::string& name, Var xq, Var xk, Var xv, const AttentionConfig& cfg,
                 const Var* mask, Tensor* weights) {
  const Shape& sq = xq.shape();
  const Shape& sk = xk.shape();
  const Shape& sv = xv.shape();
  if (sq.size() < 2 || sk.size() != sq.size() || sv.size() != sq.size()) {
    throw ShapeError(name + ": query/key/value ranks differ: " + to_string(sq) + ", " + to_string(sk) + ", " +
                     to_string(sv));
  }
  const std::size_t r = sq.size();
  const std::size_t nq = sq[r - 2];
  const std::size_t np = sk[r - 2];
  if (np == 0 || sv[r - 2] != np) throw ShapeError(name + ": key and value counts differ");
  for (std::size_t i = 0; i + 2 < r; ++i) {
    if (sq[i] != sk[i] || sq[i] != sv[i]) throw ShapeError(name + ": leading extents differ");
  }
  const std::size_t K = cfg.K;
  const std::size_t dh = cfg.d_h;

  // [..., N, D] -> [..., K, N, d_h]
  auto heads = [&](Var x, std::size_t n) {
    Shape s(x.shape().begin(), x.shape().end() - 1);
    s.back() = n;
    s.push_back(K);
    s.push_back(dh);
    std::vector<std::size_t> perm(r + 1);
    std::iota(perm.begin(), perm.end(), 0);
    std::swap(perm[r - 2], perm[r - 1]);
    return permute(reshape(x, s), perm);
  };
  Var q = heads(affine(ps, name + ".f1", xq, true), nq);
  Var k = heads(affine(ps, name + ".f2", xk, true), np);
  Var v = heads(affine(ps, name + ".f3", xv, true), np);

  Var scores = scale(matmul(q, transpose_last2(k)), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (mask != nullptr) scores = add(scores, *mask);
  Var att = softmax_last(scores);
  if (weights != nullptr) *weights = att.value();
  Var o = matmul(att, v);  // [..., K, N_Q, d_h]
  std::vector<std::size_t> perm(r + 1);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[r - 2], perm[r - 1]);
  Shape out_shape(sq.begin(), sq.end() - 1);
  out_shape.push_back(cfg.D());
  Var cat = reshape(permute(o, perm), out_shape);
  return affine(ps, name + ".fo", cat, true);
}

// ---------------------------------------------------------------------------

Tensor pearson_columns(const Tensor& s) {
  if (s.rank() != 2) throw ShapeError("pearson_columns expects a T x N series");
  const std::size_t T = s.dim(0);
  const std::size_t N = s.dim(1);
  if (T < 2) throw DataError("correlation needs at least 2 time steps");
  std::vector<double> mean(N, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < N; ++j) mean[j] += s[t * N + j];
  for (auto& m : mean) m /= static_cast<double>(T);
  std::vector<double> c(T * N);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < N; ++j) c[t * N + j] = s[t * N + j] - mean[j];
  Tensor r({N, N});
  std::vector<double> ss(N, 0.0);
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t t = 0; t < T; ++t) ss[j] += c[t * N + j] * c[t * N + j];
  for (std::size_t i = 0; i < N; ++i) {
    r[i * N + i] = 1.0;
    for (std::size_t j = i + 1; j < N; ++j) {
      double cov = 0.0;
      for (std::size_t t = 0; t < T; ++t) cov += c[t * N + i] * c[t * N + j];
      const double den = std::sqrt(ss[i] * ss[j]);
      const double v = den > 0.0 ? cov / den : 0.0;
      r[i * N + j] = v;
      r[j * N + i] = v;
    }
  }
  return r;
}

double regional_weight(double r, double d, double sigma_dist, double lambda_r) {
  if (!(r > lambda_r)) return 0.0;
  const double u = d / sigma_dist;
  return r * std::exp(-(u * u));
}

RegionalAdjacency build_regional_adjacency(const Tensor& span, const std::vector<std::array<double, 2>>& coords,
                                           double lambda_r) {
  const std::size_t N = span.dim(1);
  if (coords.size() != N) throw ShapeError("adjacency: coordinate count differs from series width");
  RegionalAdjacency out;
  out.lambda_r = lambda_r;
  out.r = pearson_columns(span);

  Tensor d({N, N});
  double m = 0.0;
  double m2 = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      d[i * N + j] = std::hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]);
      if (j > i) {
        m += d[i * N + j];
        m2 += d[i * N + j] * d[i * N + j];
        ++pairs;
      }
    }
  }
  if (pairs > 0) {
    m /= static_cast<double>(pairs);
    out.sigma_dist = std::sqrt(std::max(0.0, m2 / static_cast<double>(pairs) - m * m));
  }
  // A single cell (or coincident cells) has no spread; only the self-pair
  // survives, at distance 0.
  const double sd = out.sigma_dist > 0.0 ? out.sigma_dist : 1.0;

  out.a = Tensor({N, N});
  out.a_norm = Tensor({N, N});
  for (std::size_t i = 0; i < N; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      const double w = regional_weight(out.r[i * N + j], d[i * N + j], sd, lambda_r);
      out.a[i * N + j] = w;
      row += w;
    }
    if (row > 0.0) {
      for (std::size_t j = 0; j < N; ++j) out.a_norm[i * N + j] = out.a[i * N + j] / row;
    }
  }
  return out;
}

void declare_dynamic_conv(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t D) {
  ps.add(name + ".W", glorot_uniform({D, D}, D, D, rng));
}

Var dynamic_conv(ParamStore& ps, const std::string& name, Var adj, Var h) {
  const Shape& a = adj.shape();
  if (a.size() != 2 || a[0] != a[1] || h.value().dim(-2) != a[0]) {
    throw ShapeError(name + ": adjacency " + to_string(a) + " does not match hidden " + to_string(h.shape()));
  }
  return relu(matmul(adj, matmul(h, P(ps, h, name + ".W"))));
}

std::vector<std::int64_t> grid_conv_table(std::size_t n_h, std::size_t n_w, std::size_t k) {
  if (k % 2 == 0) throw ConfigError("grid convolution kernel must be odd");
  const auto half = static_cast<std::int64_t>(k / 2);
  std::vector<std::int64_t> idx;
  idx.reserve(n_h * n_w * k * k);
  for (std::int64_t r = 0; r < static_cast<std::int64_t>(n_h); ++r) {
    for (std::int64_t c = 0; c < static_cast<std::int64_t>(n_w); ++c) {
      for (std::int64_t dr = -half; dr <= half; ++dr) {
        for (std::int64_t dc = -half; dc <= half; ++dc) {
          const std::int64_t rr = r + dr;
          const std::int64_t cc = c + dc;
          const bool inside = rr >= 0 && cc >= 0 && rr < static_cast<std::int64_t>(n_h) && cc < static_cast<std::int64_t>(n_w);
          idx.push_back(inside ? rr * static_cast<std::int64_t>(n_w) + cc : -1);
        }
      }
    }
  }
  return idx;
}

void declare_grid_conv(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t k, std::size_t d_in,
                       std::size_t d_out) {
  declare_affine(ps, rng, name, k * k * d_in, d_out);
}

Var grid_conv(ParamStore& ps, const std::string& name, Var h, const std::vector<std::int64_t>& table, std::size_t k) {
  return affine(ps, name, neighbor_gather(h, table, k * k), true);
}

// ---------------------------------------------------------------------------

Var spatial_attention(ParamStore& ps, const std::string& name, Var h, Var ste, const AttentionConfig& cfg,
                      Tensor* weights) {
  Var x = concat_last(h, ste);
  return mh_attention(ps, name, x, x, x, cfg, nullptr, weights);
}

Var temporal_attention(ParamStore& ps, const std::string& name, Var h, Var ste, const AttentionConfig& cfg,
                       Tensor* weights) {
  if (h.shape().size() != 4) throw ShapeError(name + ": expected [B, T, N, D], got " + to_string(h.shape()));
  Var x = swap12(concat_last(h, ste));
  return swap12(mh_attention(ps, name, x, x, x, cfg, nullptr, weights));
}

void declare_gated_fusion(ParamStore& ps, std::mt19937_64& rng, const std::string& name, std::size_t D) {
  ps.add(name + ".W1", glorot_uniform({D, D}, D, D, rng));
  ps.add(name + ".W2", glorot_uniform({D, D}, D, D, rng));
  ps.add(name + ".b", Tensor({D}));
}

Var gated_fusion(ParamStore& ps, const std::string& name, Var hs, Var ht, GateKind kind) {
  if (hs.shape() != ht.shape()) {
    throw ShapeError(name + ": spatial " + to_string(hs.shape()) + " vs temporal " + to_string(ht.shape()));
  }
  Var pre = add(add(matmul(hs, P(ps, hs, name + ".W1")), matmul(ht, P(ps, hs, name + ".W2"))), P(ps, hs, name + ".b"));
  Var g = kind == GateKind::Relu ? relu(pre) : sigmoid(pre);
  return add(ht, mul(g, sub(hs, ht)));
}

Var gaussian_mask(Var dist, Var s) {
  const Tensor& D = dist.value();
  const Tensor& S = s.value();
  if (D.rank() != 2 || S.rank() != 2 || S.dim(0) != D.dim(0)) {
    throw ShapeError("gaussian_mask: distances " + to_string(D.shape()) + " vs widths " + to_string(S.shape()));
  }
  const std::size_t nx = D.dim(0);
  const std::size_t nz = D.dim(1);
  const std::size_t K = S.dim(1);
  Tensor m({K, nx, nz});
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t r = 0; r < nx; ++r) {
      const double sigma = std::exp(S[r * K + k]);
      for (std::size_t c = 0; c < nz; ++c) {
        const double u = D[r * nz + c] / sigma;
        m[(k * nx + r) * nz + c] = -0.5 * u * u;
      }
    }
  }
  const std::uint32_t is = s.id;
  const std::uint32_t im = static_cast<std::uint32_t>(s.tape->size());
  // dM/ds = (d / sigma)^2 = -2 M.
  return s.tape->push(std::move(m), s.requires_grad(), [is, im, nx, nz, K](Tape& t, const Tensor& g) {
    const Tensor& M = t.value(im);
    Tensor& gs = t.grad(is);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t r = 0; r < nx; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < nz; ++c) {
          const std::size_t o = (k * nx + r) * nz + c;
          acc += g[o] * -2.0 * M[o];
        }
        gs[r * K + k] += acc;
      }
    }
  });
}

Var bipartite_transform(ParamStore& ps, const std::string& name, Var ste_x, Var h_z, Var ste_z, const Var* mask,
                        const AttentionConfig& cfg, Tensor* weights) {
  return mh_attention(ps, name, ste_x, concat_last(h_z, ste_z), h_z, cfg, mask, weights);
}

Var temporal_transform(ParamStore& ps, const std::string& name, Var query, Var key, Var value,
                       const AttentionConfig& cfg, Tensor* weights) {
  if (query.shape().size() != 4) throw ShapeError(name + ": expected [B, T, N, D], got " + to_string(query.shape()));
  return swap12(mh_attention(ps, name, swap12(query), swap12(key), swap12(value), cfg, nullptr, weights));
}

}  // namespace rkt
