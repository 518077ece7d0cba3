// Acceptance run: one PASS/FAIL line per criterion. Arguments select
// criteria by number (default: all). Exit status is nonzero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "rkt/errors.hpp"
#include "rkt/gradcheck.hpp"
#include "rkt/embeddings.hpp"
#include "rkt/kernels.hpp"
#include "rkt/pipeline.hpp"

using namespace rkt;
using oracle::Mat;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void randomize(ParamStore& ps, std::mt19937_64& rng, double lo = -0.8, double hi = 0.8) {
  std::uniform_real_distribution<double> d(lo, hi);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (auto& v : ps.entry(i).value.data()) v = d(rng);
}

Var weighted(Var y, const Tensor& w) { return sum(mul(y, y.tape->constant(w))); }

double max_row_sum_error(const Tensor& w) {
  const std::size_t n = w.dim(-1);
  double worst = 0.0;
  for (std::size_t r = 0; r < w.size() / n; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += w[r * n + j];
    worst = std::max(worst, std::abs(s - 1.0));
  }
  return worst;
}

// ---------------------------------------------------------------------------

void gradients(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  AttentionConfig cfg{2, 2};
  GradCheckOptions opt;
  double worst = 0.0;
  std::size_t checked = 0;
  auto check = [&](const std::string& what, ParamStore& ps, const ScalarFn& f, GradCheckOptions gopt) {
    GradCheckResult r = finite_diff_check(f, ps, gopt);
    checked += r.checked;
    worst = std::max(worst, r.max_rel_error);
    o.require(r.checked > 0 && r.max_rel_error < 1e-4,
              what + " " + r.worst_param + " rel " + std::to_string(r.max_rel_error));
  };

  {
    ParamStore ps;
    ps.add("x", oracle::random({3, 5}, rng, -2, 2));
    Tensor w = oracle::random({3, 5}, rng);
    check("softmax", ps, [&](Tape& t) { return weighted(softmax_last(t.param(ps, "x")), w); }, opt);
  }
  {
    ParamStore ps;
    declare_fcn2(ps, rng, "f", 3, 4, 2);
    randomize(ps, rng);
    ps.add("x", oracle::random({5, 3}, rng));
    Tensor w = oracle::random({5, 2}, rng);
    check("fcn2", ps, [&](Tape& t) { return weighted(fcn2(ps, "f", t.param(ps, "x")), w); }, opt);
  }
  {
    ParamStore ps;
    declare_mh_attention(ps, rng, "a", 3, 4, 3, cfg);
    randomize(ps, rng);
    ps.add("q", oracle::random({3, 3}, rng));
    ps.add("k", oracle::random({4, 4}, rng));
    ps.add("v", oracle::random({4, 3}, rng));
    ps.add("m", oracle::random({2, 3, 4}, rng, -2, 0));
    Tensor w = oracle::random({3, 4}, rng);
    check("mh_attention", ps, [&](Tape& t) {
      return weighted(mh_attention(ps, "a", t.param(ps, "q"), t.param(ps, "k"), t.param(ps, "v"), cfg), w);
    }, opt);
    check("masked attention", ps, [&](Tape& t) {
      Var m = t.param(ps, "m");
      return weighted(mh_attention(ps, "a", t.param(ps, "q"), t.param(ps, "k"), t.param(ps, "v"), cfg, &m), w);
    }, opt);
  }
  {
    ParamStore ps;
    declare_dynamic_conv(ps, rng, "dc", 3);
    declare_gated_fusion(ps, rng, "g", 3);
    randomize(ps, rng);
    ps.add("h", oracle::random({2, 4, 3}, rng));
    ps.add("ht", oracle::random({2, 4, 3}, rng));
    Tensor a = oracle::random({4, 4}, rng, 0, 1);
    Tensor w = oracle::random({2, 4, 3}, rng);
    check("dynamic_conv", ps, [&](Tape& t) { return weighted(dynamic_conv(ps, "dc", t.constant(a), t.param(ps, "h")), w); },
          opt);
    for (auto kind : {GateKind::Relu, GateKind::Logistic}) {
      check("gated_fusion", ps, [&](Tape& t) {
        return weighted(gated_fusion(ps, "g", t.param(ps, "h"), t.param(ps, "ht"), kind), w);
      }, opt);
    }
  }
  {
    ParamStore ps;
    ps.add("s", oracle::random({3, 2}, rng, 5.5, 6.5));
    Tensor dist = oracle::random({3, 4}, rng, 0, 1000);
    Tensor w = oracle::random({2, 3, 4}, rng);
    check("gaussian_mask", ps, [&](Tape& t) { return weighted(gaussian_mask(t.constant(dist), t.param(ps, "s")), w); },
          opt);
  }
  {
    ParamStore ps;
    declare_mh_attention(ps, rng, "b", 3, 6, 3, cfg);
    randomize(ps, rng);
    ps.add("x", oracle::random({1, 2, 4, 3}, rng));
    ps.add("hz", oracle::random({1, 2, 5, 3}, rng));
    ps.add("s", oracle::random({4, 2}, rng, 5.5, 6.5));
    Tensor dist = oracle::random({4, 5}, rng, 0, 1000);
    Tensor w = oracle::random({1, 2, 4, 4}, rng);
    check("bipartite transform", ps, [&](Tape& t) {
      Var m = gaussian_mask(t.constant(dist), t.param(ps, "s"));
      Var hz = t.param(ps, "hz");
      return weighted(bipartite_transform(ps, "b", t.param(ps, "x"), hz, hz, &m, cfg), w);
    }, opt);
  }
  {
    ParamStore ps;
    declare_mh_attention(ps, rng, "tt", 3, 3, 4, cfg);
    randomize(ps, rng);
    ps.add("q", oracle::random({1, 2, 3, 3}, rng));
    ps.add("k", oracle::random({1, 4, 3, 3}, rng));
    ps.add("v", oracle::random({1, 4, 3, 4}, rng));
    Tensor w = oracle::random({1, 2, 3, 4}, rng);
    check("temporal transform", ps, [&](Tape& t) {
      return weighted(temporal_transform(ps, "tt", t.param(ps, "q"), t.param(ps, "k"), t.param(ps, "v"), cfg), w);
    }, opt);
  }
  {
    PreparedData d = fixture::desk_data();
    ModelConfig c = fixture::desk_config();
    c.L_X = 1;
    c.L_Z = 1;
    Model m(c, make_context(d, c));
    Batch b = make_batch(d, std::vector<std::size_t>{5, 60}, c.P, c.Q);
    GradCheckOptions fopt;
    fopt.max_coords_per_param = 3;
    check("full forward + loss", m.params(), [&](Tape& t) {
      return masked_mae(m.forward(t, b.x, b.z, b.tfeat), b.y, b.weight);
    }, fopt);
  }
  const double secs = seconds_since(t0);
  o.require(secs < 120.0, "runtime");
  o.detail << "max rel error " << worst << " over " << checked << " coordinates, " << secs << " s";
}

void attention_rows(Outcome& o) {
  double worst = 0.0;
  std::size_t rows = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(1000 + seed);
    std::uniform_int_distribution<std::size_t> n(1, 7), heads(1, 3), width(1, 4);
    AttentionConfig cfg{heads(rng), width(rng)};
    const std::size_t nq = n(rng), nk = n(rng), d = n(rng);
    ParamStore ps;
    declare_mh_attention(ps, rng, "a", d, 2 * d, d, cfg);
    randomize(ps, rng, -3, 3);
    Tape t(false);
    Tensor w;
    Var xq = t.constant(oracle::random({1, 2, nq, d}, rng, -4, 4));
    Var hz = t.constant(oracle::random({1, 2, nk, d}, rng, -4, 4));
    // Sigmas from 1 m to ~20 km against distances up to 3 km, so some rows
    // are dominated by a single cell.
    Var mask = gaussian_mask(t.constant(oracle::random({nq, nk}, rng, 0, 3000)),
                             t.constant(oracle::random({nq, cfg.K}, rng, 0, 10)));
    bipartite_transform(ps, "a", xq, hz, hz, &mask, cfg, &w);
    worst = std::max(worst, max_row_sum_error(w));
    rows += w.size() / w.dim(-1);
    mh_attention(ps, "a", xq, concat_last(hz, hz), hz, cfg, nullptr, &w);
    worst = std::max(worst, max_row_sum_error(w));
    rows += w.size() / w.dim(-1);
  }
  o.require(worst < 1e-9, "row sum");
  o.detail << rows << " rows, worst |sum - 1| = " << worst;
}

void formulas(Outcome& o) {
  const double sigma_dist = 437.25;
  const double a = regional_weight(0.8, sigma_dist, sigma_dist, 0.6);
  o.require(std::abs(a - 0.8 * std::exp(-1.0)) < 1e-12, "A^R at d = sigma_dist");

  Tape t(false);
  const double s = std::log(500.0);
  const double sigma = std::exp(s);
  Tensor m = gaussian_mask(t.constant(Tensor::matrix({{sigma}})), t.constant(Tensor::matrix({{s}}))).value();
  o.require(m[0] == -0.5, "gaussian mask at d = sigma");

  o.require(regional_weight(0.6, 0.0, sigma_dist, 0.6) == 0.0, "r = 0.6 zeroed");
  o.require(regional_weight(0.3, 0.0, sigma_dist, 0.6) == 0.0, "r = 0.3 zeroed");
  o.require(regional_weight(-0.9, 0.0, sigma_dist, 0.6) == 0.0, "negative r zeroed");
  o.require(regional_weight(0.6000001, 0.0, sigma_dist, 0.6) > 0.0, "r just above 0.6 kept");

  // End to end: correlations 0.8 and 0.5 built from orthogonal series.
  const std::size_t T = 8;
  const double u[T] = {1, -1, 1, -1, 1, -1, 1, -1};
  const double v[T] = {1, 1, -1, -1, 1, 1, -1, -1};
  Tensor z({T, 3});
  for (std::size_t i = 0; i < T; ++i) {
    z.at({i, 0}) = u[i];
    z.at({i, 1}) = 0.8 * u[i] + 0.6 * v[i];
    z.at({i, 2}) = 0.5 * u[i] + std::sqrt(0.75) * v[i];
  }
  std::vector<std::array<double, 2>> xy = {{0, 0}, {0, 300}, {400, 0}};
  auto adj = build_regional_adjacency(z, xy, 0.6);
  const double d01 = 300.0 / adj.sigma_dist;
  o.require(std::abs(adj.r.at({0, 1}) - 0.8) < 1e-12, "pearson 0.8");
  o.require(std::abs(adj.a.at({0, 1}) - 0.8 * std::exp(-d01 * d01)) < 1e-12, "adjacency entry");
  o.require(adj.a.at({0, 2}) == 0.0, "r = 0.5 zeroed in the adjacency");
  o.detail << "A^R(0.8, sigma) = " << a << ", mask(sigma) = " << m[0];
}

void paper_shapes(Outcome& o) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(4);
  const std::size_t nx = 148, nh = 33, nw = 34, nz = nh * nw, P = 12, Q = 3;
  ModelConfig c;  // D = 64, K = 8, d_h = 8, P = 12, Q = 3
  RegionGrid grid;
  grid.n_h = nh;
  grid.n_w = nw;
  grid.origin_lat = 37.49;
  grid.origin_lon = 127.02;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  grid.poi.resize(nz);
  for (auto& p : grid.poi)
    for (auto& v : p) v = std::floor(20 * u(rng));
  grid.sat.assign(nz, std::vector<double>(4));
  for (auto& f : grid.sat)
    for (auto& v : f) v = u(rng) - 0.5;

  ModelContext ctx;
  ctx.n_x = nx;
  ctx.n_z = nz;
  ctx.n_h = nh;
  ctx.n_w = nw;
  ctx.e_x = oracle::random({nx, c.D}, rng);
  ctx.geo = cell_geo_features(grid);
  // Sparse row-normalized adjacency: self plus a few random neighbours.
  ctx.adj = Tensor({nz, nz}, 0.0);
  for (std::size_t i = 0; i < nz; ++i) {
    std::vector<std::size_t> nb = {i, (i + 1) % nz, (i * 7 + 3) % nz, (i + nw) % nz};
    for (auto j : nb) ctx.adj.at({i, j}) += 1.0 / static_cast<double>(nb.size());
  }
  ctx.dist = oracle::random({nx, nz}, rng, 0, 5000);
  ctx.sigma_dist = 1400.0;
  Model m(c, std::move(ctx));

  Tensor x = oracle::random({1, P, nx}, rng, -2, 2);
  Tensor z = oracle::random({1, P, nz}, rng, -2, 2);
  std::vector<Timestamp> ts;
  for (std::size_t i = 0; i < P + Q; ++i) ts.push_back(parse_timestamp("2024-03-04T08:00") + static_cast<Timestamp>(i) * kSecondsPerHour);
  Tensor tf = temporal_features({ts});
  Tensor y;
  {
    Tape t(false);
    y = m.forward(t, x, z, tf).value();
  }
  o.require(y.shape() == Shape{1, Q, nx}, "shape " + to_string(y.shape()));
  o.require(y.all_finite(), "finite");
  o.detail << "output " << to_string(y.shape()) << ", " << m.params().element_count() << " parameters, "
           << seconds_since(t0) << " s";
}

// Generator noise off: at 1 km/h the irreducible error alone is ~0.09
// normalized, above the 0.05 target.
constexpr std::size_t kOverfitWindows = 50;
constexpr std::size_t kOverfitEpochs = 500;

void overfit(Outcome& o) {
  const auto t0 = Clock::now();
  SynthSpec spec = fixture::desk_spec(1, 400);
  spec.noise = 0.0;
  SynthResult gen = generate(spec);
  PreparedData d = prepare(LoadedData{gen.graph, gen.grid, gen.data}, 12, 3);
  ModelConfig c = fixture::desk_config();
  c.L_X = 1;
  c.L_Z = 1;
  c.epochs = kOverfitEpochs;
  c.batch_size = 4;
  c.learning_rate = 2e-3;
  TrainOptions opt;
  auto all = window_starts(d.split, Partition::Train, c.P, c.Q);
  for (std::size_t i = 0; i < kOverfitWindows; ++i) opt.train_starts.push_back(all[i * all.size() / kOverfitWindows]);
  opt.validate = false;
  opt.stop_train_mae = 0.05;
  Model m(c, make_context(d, c));
  TrainResult r = train(m, d, opt);
  const double secs = seconds_since(t0);
  const double final_mae = r.history.back().train_mae;
  o.require(final_mae < 0.05, "training MAE");
  o.require(secs < 300.0, "runtime");
  o.detail << "training MAE " << r.history.front().train_mae << " -> " << final_mae << " (normalized) after "
           << r.history.size() << " epochs, " << secs << " s";
}

// Settings for the constructed-signal experiment. A 4-step history: with 12
// steps neither variant learns to single out the latest steps within this
// budget and both stall at the same error.
struct SignalRun {
  std::size_t steps = 3000;
  std::size_t P = 4;
  std::size_t epochs = 20;
  std::size_t stride = 2;
  double lr = 3e-3;
};

MetricsReport test_mae(const PreparedData& d, Variant v, std::uint64_t seed, const SignalRun& s) {
  RunConfig rc;
  rc.model = fixture::desk_config();
  rc.model.P = s.P;
  rc.model.L_X = 1;
  rc.model.L_Z = 1;
  rc.model.variant = v;
  rc.model.seed = seed;
  rc.model.epochs = s.epochs;
  rc.model.learning_rate = s.lr;
  rc.train_stride = s.stride;
  return run_experiment(rc, d, {}).test;
}

void constructed_signal(Outcome& o) {
  const auto t0 = Clock::now();
  const SignalRun s;
  int seeds_ok = 0;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    SynthSpec strong = fixture::desk_spec(seed, s.steps, 0.8);
    SynthResult rs = generate(strong);
    PreparedData ds = prepare(LoadedData{rs.graph, rs.grid, rs.data}, s.P, 3);
    const double full = test_mae(ds, Variant::Full, seed, s).average.mae;
    const double noreg = test_mae(ds, Variant::NoRegion, seed, s).average.mae;
    const double ha = compute_metrics(ha_predict(fit_ha(ds), ds, Partition::Test, s.P, 3)).average.mae;

    SynthResult r0 = generate(fixture::desk_spec(seed, s.steps, 0.0));
    PreparedData d0 = prepare(LoadedData{r0.graph, r0.grid, r0.data}, s.P, 3);
    const double full0 = test_mae(d0, Variant::Full, seed, s).average.mae;
    const double noreg0 = test_mae(d0, Variant::NoRegion, seed, s).average.mae;

    const bool a = full <= 0.9 * noreg;
    const bool b = full < ha;
    const double gap0 = std::abs(full0 - noreg0) / noreg0;
    const bool c = gap0 < 0.03;
    if (a && b && c) ++seeds_ok;
    o.detail << "\n    seed " << seed << ": alpha=0.8 full " << full << " no-region " << noreg << " HA " << ha
             << "; alpha=0 full " << full0 << " no-region " << noreg0 << " (gap " << 100 * gap0 << "%)"
             << (a && b && c ? "" : " [ordering broken]");
  }
  const double secs = seconds_since(t0);
  o.require(seeds_ok >= 2, "ordering on at least 2 of 3 seeds");
  o.require(secs < 1800.0, "runtime");
  o.detail << "\n    " << seeds_ok << "/3 seeds hold, " << secs << " s";
}

void oracles(Outcome& o) {
  // Metrics against a single-pass brute force.
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 70.0);
  Predictions p;
  p.y = Tensor({6, 3, 7});
  p.yhat = Tensor({6, 3, 7});
  p.weight = Tensor({6, 3, 7}, 1.0);
  for (std::size_t i = 0; i < p.y.size(); ++i) {
    p.y[i] = u(rng);
    p.yhat[i] = u(rng);
    if (i % 13 == 0) p.weight[i] = 0.0;
    if (i % 17 == 0) p.y[i] = 0.4;
  }
  MetricsReport r = compute_metrics(p);
  double worst_metric = 0.0;
  for (std::size_t q = 0; q <= 3; ++q) {
    double a = 0, s = 0, pc = 0;
    std::size_t n = 0, np = 0;
    for (std::size_t w = 0; w < 6; ++w)
      for (std::size_t qq = 0; qq < 3; ++qq)
        for (std::size_t k = 0; k < 7; ++k) {
          if (q < 3 && qq != q) continue;
          const std::size_t i = (w * 3 + qq) * 7 + k;
          if (p.weight[i] == 0.0) continue;
          const double e = std::abs(p.yhat[i] - p.y[i]);
          a += e, s += e * e, ++n;
          if (std::abs(p.y[i]) >= 1.0) pc += e / std::abs(p.y[i]), ++np;
        }
    const Metrics& m = q < 3 ? r.horizon[q] : r.average;
    worst_metric = std::max({worst_metric, std::abs(m.mae - a / n), std::abs(m.rmse - std::sqrt(s / n)),
                             std::abs(m.mape - 100.0 * pc / np)});
    o.require(m.count == n && m.mape_count == np, "metric counts");
  }
  o.require(worst_metric < 1e-9, "metrics");

  // HA bucket means against a group-by over the training span.
  PreparedData d = fixture::desk_data(3, 600);
  d.raw.x_missing[17] = 1;
  HaTable ha = fit_ha(d);
  std::map<std::pair<std::size_t, std::size_t>, std::pair<double, double>> g;
  for (std::size_t t = 0; t < d.split.train_end; ++t) {
    const std::size_t bucket = static_cast<std::size_t>(day_of_week(d.raw.timestamps[t]) * 24 + hour_of_day(d.raw.timestamps[t]));
    for (std::size_t k = 0; k < d.raw.roads(); ++k) {
      if (d.raw.x_missing[t * d.raw.roads() + k]) continue;
      auto& e = g[{bucket, k}];
      e.first += d.raw.x.at({t, k});
      e.second += 1;
    }
  }
  std::size_t ha_mismatch = 0;
  for (std::size_t b = 0; b < 168; ++b)
    for (std::size_t k = 0; k < d.raw.roads(); ++k) {
      auto it = g.find({b, k});
      const double v = ha.bucket_mean.at({b, k});
      if (it == g.end() ? !std::isnan(v) : v != it->second.first / it->second.second) ++ha_mismatch;
    }
  o.require(ha_mismatch == 0, "HA buckets");

  // Attention against the direct formula.
  AttentionConfig cfg{2, 3};
  ParamStore ps;
  declare_mh_attention(ps, rng, "att", 4, 5, 3, cfg);
  randomize(ps, rng);
  Tensor xq = oracle::random({3, 4}, rng), xk = oracle::random({4, 5}, rng), xv = oracle::random({4, 3}, rng);
  Tape t(false);
  Var out = mh_attention(ps, "att", t.constant(xq), t.constant(xk), t.constant(xv), cfg);
  const double att = oracle::max_diff(
      oracle::mh_attention(ps, "att", oracle::from(xq), oracle::from(xk), oracle::from(xv), 2, 3), out.value());
  o.require(att < 1e-12, "attention");
  o.detail << "metrics max diff " << worst_metric << ", HA mismatches " << ha_mismatch << ", attention max diff "
           << att;
}

void limits(Outcome& o) {
  std::mt19937_64 rng(31);
  AttentionConfig cfg{2, 2};
  ParamStore ps;
  declare_mh_attention(ps, rng, "b", 4, 8, 4, cfg);
  randomize(ps, rng);
  Tape t(false);
  Var q = t.constant(oracle::random({2, 3, 5, 4}, rng));
  Var hz = t.constant(oracle::random({2, 3, 7, 4}, rng));
  Var ste = t.constant(oracle::random({2, 3, 7, 4}, rng));
  Var zero = t.constant(Tensor({2, 5, 7}, 0.0));
  Tensor plain = bipartite_transform(ps, "b", q, hz, ste, nullptr, cfg).value();
  o.require(bipartite_transform(ps, "b", q, hz, ste, &zero, cfg).value() == plain, "M = 0 not bitwise");

  Var wide = gaussian_mask(t.constant(oracle::random({5, 7}, rng, 0, 3000)), t.constant(Tensor({5, 2}, std::log(1e9))));
  const double g = max_abs_diff(bipartite_transform(ps, "b", q, hz, ste, &wide, cfg).value(), plain);
  o.require(g < 1e-6, "sigma = 1e9");

  PreparedData d = fixture::desk_data();
  ModelConfig c = fixture::desk_config();
  Model full(c, make_context(d, c));
  full.params().value("bipartite.log_sigma").fill(std::log(1e9));
  ModelConfig cn = c;
  cn.variant = Variant::NoMask;
  Model nomask(cn, make_context(d, cn));
  for (std::size_t i = 0; i < nomask.params().size(); ++i) {
    auto& e = nomask.params().entry(i);
    e.value = full.params().value(e.name);
  }
  Batch b = make_batch(d, std::vector<std::size_t>{0, 50, 120}, c.P, c.Q);
  Tape t1(false), t2(false);
  const double m = max_abs_diff(full.forward(t1, b.x, b.z, b.tfeat).value(), nomask.forward(t2, b.x, b.z, b.tfeat).value());
  o.require(m < 1e-6, "no-mask model");
  o.detail << "M=0 bitwise, sigma=1e9 diff " << g << ", no-mask model diff " << m;
}

void hygiene(Outcome& o) {
  SynthResult r = generate(fixture::desk_spec(4, 400));
  PreparedData a = prepare(LoadedData{r.graph, r.grid, r.data}, 12, 3);
  SynthResult mutated = r;
  const std::size_t start = a.split.train_end;
  for (std::size_t t = start; t < mutated.data.steps(); ++t) {
    for (std::size_t k = 0; k < mutated.data.roads(); ++k) mutated.data.x.at({t, k}) = 5.0 + 3.0 * static_cast<double>((t * 7 + k) % 11);
    for (std::size_t c = 0; c < mutated.data.cells(); ++c) mutated.data.z.at({t, c}) *= -2.0;
  }
  PreparedData b = prepare(LoadedData{mutated.graph, mutated.grid, mutated.data}, 12, 3);
  o.require(a.stats.x_mean == b.stats.x_mean && a.stats.x_std == b.stats.x_std, "road normalization");
  o.require(a.stats.z_mean == b.stats.z_mean && a.stats.z_std == b.stats.z_std, "population normalization");
  ModelConfig c = fixture::desk_config();
  c.L_X = 1;
  c.L_Z = 1;
  o.require(make_context(a, c).adj.storage() == make_context(b, c).adj.storage(), "correlation adjacency");
  o.require(fit_ha(a).bucket_mean.storage() == fit_ha(b).bucket_mean.storage(), "HA table");

  c.epochs = 3;
  TrainOptions opt;
  opt.train_stride = 6;
  auto history = [&] {
    Model m(c, make_context(a, c));
    return train(m, a, opt).history;
  };
  const auto h1 = history(), h2 = history();
  bool same = h1.size() == h2.size();
  for (std::size_t i = 0; same && i < h1.size(); ++i)
    same = h1[i].train_mae == h2[i].train_mae && h1[i].val_mae == h2[i].val_mae;
  o.require(same, "history reproduction");
  o.detail << "mutating " << (mutated.data.steps() - start) << " held-out steps leaves statistics, adjacency and HA "
           << "unchanged; " << h1.size() << "-epoch history reproduced bitwise";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"gradient suite", gradients},       {"attention normalization", attention_rows},
      {"formula spot checks", formulas},   {"paper-shape forward", paper_shapes},
      {"overfit", overfit},                {"constructed-signal ordering", constructed_signal},
      {"oracle equivalence", oracles},     {"limit equivalences", limits},
      {"hygiene", hygiene},
  };
  std::vector<std::size_t> pick;
  for (int i = 1; i < argc; ++i) pick.push_back(std::stoul(argv[i]));
  if (pick.empty())
    for (std::size_t i = 1; i <= criteria.size(); ++i) pick.push_back(i);

  int failed = 0;
  for (std::size_t n : pick) {
    if (n < 1 || n > criteria.size()) {
      std::cerr << "no criterion " << n << "\n";
      return 2;
    }
    Outcome o;
    try {
      criteria[n - 1].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << n << " (" << criteria[n - 1].first << "): " << (o.pass ? "PASS" : "FAIL") << "  "
              << o.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
