#include "rkt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "rkt/errors.hpp"

namespace rkt {

namespace {

struct Eval {
  double value;
  std::uint64_t kinks;
};

Eval evaluate(const ScalarFn& f) {
  Tape tape(false);
  tape.set_track_kinks(true);
  const double v = f(tape).value().item();
  if (!std::isfinite(v)) throw NumericError("finite_diff_check: non-finite function value");
  return {v, tape.kink_signature()};
}

}  // namespace

GradCheckResult finite_diff_check(const ScalarFn& f, ParamStore& params, const GradCheckOptions& opts) {
  {
    Tape tape(true);
    Var loss = f(tape);
    if (!std::isfinite(loss.value().item())) throw NumericError("finite_diff_check: non-finite function value");
    tape.backward(loss);
  }
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& e : params) analytic.push_back(e.grad);
  params.zero_grad();

  const std::uint64_t base_kinks = evaluate(f).kinks;
  std::mt19937_64 rng(opts.seed);
  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& value = params.entry(p).value;
    std::vector<std::size_t> coords(value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opts.max_coords_per_param > 0 && coords.size() > opts.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double orig = value[i];
      value[i] = orig + opts.eps;
      const Eval plus = evaluate(f);
      value[i] = orig - opts.eps;
      const Eval minus = evaluate(f);
      value[i] = orig;
      if (plus.kinks != base_kinks || minus.kinks != base_kinks) {
        ++res.excluded;
        continue;
      }
      const double numeric = (plus.value - minus.value) / (2.0 * opts.eps);
      const double a = analytic[p][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.rel_floor});
      ++res.checked;
      if (err > res.max_rel_error) {
        res.max_rel_error = err;
        res.worst_param = params.entry(p).name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace rkt
