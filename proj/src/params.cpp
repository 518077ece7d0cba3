#include "rkt/params.hpp"

#include <cmath>

#include "rkt/errors.hpp"

namespace rkt {

std::size_t ParamStore::add(std::string name, Tensor init) {
  if (lookup_.contains(name)) throw ConfigError("duplicate parameter name: " + name);
  const std::size_t idx = entries_.size();
  lookup_.emplace(name, idx);
  Tensor zeros(init.shape());
  entries_.push_back(Entry{std::move(name), std::move(init), zeros, zeros, zeros});
  return idx;
}

bool ParamStore::contains(std::string_view name) const { return lookup_.contains(std::string(name)); }

std::size_t ParamStore::index(std::string_view name) const {
  auto it = lookup_.find(std::string(name));
  if (it == lookup_.end()) throw ConfigError("unknown parameter: " + std::string(name));
  return it->second;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.name);
  return out;
}

void ParamStore::zero_grad() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

std::vector<Tensor> ParamStore::snapshot() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

void ParamStore::restore(const std::vector<Tensor>& values) {
  if (values.size() != entries_.size()) throw ShapeError("snapshot size does not match parameter store");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i].shape() != entries_[i].value.shape()) {
      throw ShapeError("snapshot shape mismatch for " + entries_[i].name);
    }
    entries_[i].value = values[i];
  }
}

struct AdamAccess {
  static void step(ParamStore& ps, const AdamOptions& o) {
    if (!ps.grads_fresh_) {
      throw NumericError("adam_step called without a fresh backward pass");
    }
    ps.step_ += 1;
    const double t = static_cast<double>(ps.step_);
    const double c1 = 1.0 - std::pow(o.beta1, t);
    const double c2 = 1.0 - std::pow(o.beta2, t);
    for (auto& e : ps.entries_) {
      auto val = e.value.data();
      auto g = e.grad.data();
      auto m = e.m.data();
      auto v = e.v.data();
      for (std::size_t i = 0; i < val.size(); ++i) {
        m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
        v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        val[i] -= o.lr * mhat / (std::sqrt(vhat) + o.eps);
      }
      e.grad.fill(0.0);
    }
    ps.grads_fresh_ = false;
  }
};

void adam_step(ParamStore& params, const AdamOptions& opts) { AdamAccess::step(params, opts); }

Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor t(shape);
  for (auto& x : t.data()) x = dist(rng);
  return t;
}

}  // namespace rkt
