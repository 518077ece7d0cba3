#pragma once

#include "rkt/model.hpp"
#include "rkt/synth.hpp"
#include "rkt/train.hpp"

namespace fixture {

inline rkt::SynthSpec desk_spec(std::uint64_t seed = 1, std::size_t steps = 300, double alpha = 0.8) {
  rkt::SynthSpec s;
  s.n_roads = 20;
  s.n_h = 6;
  s.n_w = 6;
  s.steps = steps;
  s.seed = seed;
  s.alpha = alpha;
  return s;
}

inline rkt::PreparedData desk_data(std::uint64_t seed = 1, std::size_t steps = 300, double alpha = 0.8) {
  rkt::SynthResult r = rkt::generate(desk_spec(seed, steps, alpha));
  return rkt::prepare(rkt::LoadedData{r.graph, r.grid, r.data}, 12, 3);
}

inline rkt::ModelConfig desk_config() {
  rkt::ModelConfig c;
  c.D = 16;
  c.K = 4;
  c.d_h = 4;
  return c;
}

}  // namespace fixture
