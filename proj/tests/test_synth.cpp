#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "rkt/errors.hpp"
#include "rkt/synth.hpp"

using namespace rkt;

namespace {

// corr(x[t, r], local[t - lag, r]) over t in [lag, T).
double lagged_corr(const SynthResult& s, std::size_t r, std::size_t lag) {
  const std::size_t T = s.data.steps(), n = s.data.roads();
  std::vector<double> a, b;
  for (std::size_t t = lag; t < T; ++t) {
    a.push_back(s.data.x[t * n + r]);
    b.push_back(s.local_pop[(t - lag) * n + r]);
  }
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / a.size();
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / b.size();
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

SynthSpec small(double alpha, std::uint64_t seed) {
  SynthSpec s;
  s.n_roads = 12;
  s.steps = 3000;
  s.alpha = alpha;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("synthetic coupling shows up in lagged correlation") {
  for (std::uint64_t seed : {1, 2}) {
    SynthResult on = generate(small(0.8, seed));
    std::size_t strong = 0;
    for (std::size_t r = 0; r < 12; ++r) strong += lagged_corr(on, r, 1) < -0.5;
    CHECK(strong >= 11);  // at least 90% of roads

    SynthResult off = generate(small(0.0, seed));
    for (std::size_t r = 0; r < 12; ++r) CHECK(std::abs(lagged_corr(off, r, 1)) <= 0.1);
  }
  SynthSpec flipped = small(0.8, 3);
  flipped.coupling_sign = 1.0;
  SynthResult pos = generate(flipped);
  for (std::size_t r = 0; r < 12; ++r) CHECK(lagged_corr(pos, r, 1) > 0.5);
}

TEST_CASE("synthetic data is deterministic and well formed") {
  SynthSpec s = small(0.8, 7);
  s.steps = 400;
  SynthResult a = generate(s), b = generate(s);
  CHECK(a.data.x == b.data.x);
  CHECK(a.data.z == b.data.z);
  CHECK(a.grid.sat == b.grid.sat);
  s.seed = 8;
  CHECK_FALSE(generate(s).data.x == a.data.x);

  CHECK(a.data.x.shape() == Shape{400, 12});
  CHECK(a.data.z.shape() == Shape{400, 36});
  CHECK(a.grid.sat_dim() == 4);
  for (double v : a.data.x.data()) CHECK((v >= 1.0 && v <= 80.0));
  for (double v : a.data.z.data()) CHECK(v >= 0.0);
  CHECK(format_timestamp(a.data.timestamps[0]) == "2024-01-01T00:00:00");
  CHECK(a.data.timestamps[399] - a.data.timestamps[0] == 399 * kSecondsPerHour);
  // Every road lies strictly inside the grid.
  for (const auto& n : a.graph.nodes()) {
    CHECK(n.pos.lat > a.grid.origin_lat);
    CHECK(n.pos.lon > a.grid.origin_lon);
  }
  for (const auto& e : a.graph.edges()) CHECK(e.distance_m > 0.0);

  // Commercial cells carry more shopping POI on average.
  double com = 0, res = 0;
  std::size_t nc = 0;
  for (std::size_t c = 0; c < a.grid.cells(); ++c) {
    if (a.commercial[c]) com += a.grid.poi[c][0], ++nc;
    else res += a.grid.poi[c][0];
  }
  REQUIRE(nc > 0);
  REQUIRE(nc < a.grid.cells());
  CHECK(com / nc > res / (a.grid.cells() - nc));
}

TEST_CASE("synthetic data survives a disk round trip") {
  SynthSpec s = small(0.5, 4);
  s.steps = 200;
  SynthResult a = generate(s);
  inject_missing(a.data, 0.1, 9);
  auto dir = std::filesystem::temp_directory_path() / "rkt_synth_rt";
  std::filesystem::remove_all(dir);
  write_dataset(dir, a.graph, a.grid, a.data);
  LoadedData l = load_dataset(dir);
  CHECK(l.data.x == a.data.x);
  CHECK(l.data.z == a.data.z);
  CHECK(l.data.x_missing == a.data.x_missing);
  CHECK(l.grid.sat == a.grid.sat);
  CHECK(l.grid.poi == a.grid.poi);
  CHECK(l.graph.edges().size() == a.graph.edges().size());
  std::filesystem::remove_all(dir);
}

TEST_CASE("missing-value injection") {
  SynthSpec s = small(0.8, 5);
  s.steps = 200;
  SynthResult a = generate(s);
  TrafficDataset d = a.data;
  inject_missing(d, 0.1, 1);
  CHECK(std::accumulate(d.x_missing.begin(), d.x_missing.end(), 0) == 240);
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    if (d.x_missing[i]) CHECK(d.x[i] == 0.0);
    else CHECK(d.x[i] == a.data.x[i]);
  }
  TrafficDataset e = a.data;
  inject_missing(e, 0.1, 1);
  CHECK(e.x_missing == d.x_missing);
  TrafficDataset f = a.data;
  inject_missing(f, 0.0, 1);
  CHECK(std::accumulate(f.x_missing.begin(), f.x_missing.end(), 0) == 0);
  CHECK_THROWS_AS(inject_missing(f, 0.5, 1), ConfigError);
  CHECK_THROWS_AS(inject_missing(f, -0.1, 1), ConfigError);
}

TEST_CASE("synth spec validation") {
  SynthSpec s;
  s.steps = 100;
  CHECK_THROWS_AS(generate(s), ConfigError);
  s = SynthSpec{};
  s.n_h = 2;
  CHECK_THROWS_WITH_AS(generate(s), doctest::Contains("grid too small"), ConfigError);
  s = SynthSpec{};
  s.alpha = 1.5;
  CHECK_THROWS_AS(generate(s), ConfigError);
  CHECK_THROWS_AS(synth_spec_from_json({{"bogus", 1}}), ConfigError);
  SynthSpec r = synth_spec_from_json({{"alpha", 0.0}, {"n_roads", 5}});
  CHECK(r.alpha == 0.0);
  CHECK(r.n_roads == 5);
  CHECK(to_json(synth_spec_from_json(to_json(SynthSpec{}))) == to_json(SynthSpec{}));
}
