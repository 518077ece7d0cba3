#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "rkt/data.hpp"

namespace rkt {

/// Parameters of the coupled road/region generator. Speeds follow a
/// half-day cycle; population follows a daily cycle by cell archetype plus
/// random event surges. With coupling > 0 each road slows down in proportion
/// to the standardized population of cells within 500 m, `lag` hours earlier.
struct SynthSpec {
  std::size_t n_roads = 20;
  std::size_t n_h = 6;
  std::size_t n_w = 6;
  std::size_t steps = 3000;
  std::uint64_t seed = 1;
  double alpha = 0.8;          // coupling strength in [0, 1]
  std::size_t lag = 1;         // hours
  double coupling_sign = -1.0;  // -1: more people, slower roads
  double noise = 1.0;          // km/h
  double commercial_frac = 0.5;
  double event_rate = 0.08;    // surges per hour
  std::size_t sat_dim = 4;
  double cell_size_m = 150.0;
  double origin_lat = 37.49;
  double origin_lon = 127.02;
  std::string start = "2024-01-01T00:00:00";
  std::size_t min_steps = 150;  // 10 * (P + Q) at P = 12, Q = 3

  void validate() const;
};

nlohmann::ordered_json to_json(const SynthSpec& s);
// Missing keys keep defaults; unknown keys are rejected.
SynthSpec synth_spec_from_json(const nlohmann::json& j);

struct SynthResult {
  RoadGraph graph;
  RegionGrid grid;
  TrafficDataset data;
  Tensor local_pop;  // T x N_X mean population of cells within 500 m
  std::vector<bool> commercial;
};

SynthResult generate(const SynthSpec& spec);

// Marks exactly round(frac * T * N_X) speed entries missing, sampled without
// replacement. Requires 0 <= frac < 0.5.
void inject_missing(TrafficDataset& d, double frac, std::uint64_t seed);

}  // namespace rkt
