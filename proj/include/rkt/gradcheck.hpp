#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "rkt/autodiff.hpp"

namespace rkt {

struct GradCheckOptions {
  double eps = 1e-5;
  // Denominator floor of the relative error, so that coordinates whose true
  // gradient is ~0 are judged on absolute agreement.
  double rel_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample per tensor.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 7;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
  // Coordinates skipped because the +/- perturbation changed the sign pattern
  // of some ReLU or |x| input.
  std::size_t excluded = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

using ScalarFn = std::function<Var(Tape&)>;

/// Central-difference check of the reverse-mode gradient of `f` with respect
/// to every parameter in `params`. `f` must read parameters through
/// `Tape::param` and be deterministic.
GradCheckResult finite_diff_check(const ScalarFn& f, ParamStore& params, const GradCheckOptions& opts = {});

}  // namespace rkt
