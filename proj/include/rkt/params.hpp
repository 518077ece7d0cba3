#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rkt/tensor.hpp"

namespace rkt {

/// Named, insertion-ordered set of trainable tensors with gradient slots and
/// Adam moments.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    Tensor m;
    Tensor v;
  };

  std::size_t add(std::string name, Tensor init);

  bool contains(std::string_view name) const;
  std::size_t index(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;

  Entry& entry(std::size_t i) { return entries_[i]; }
  const Entry& entry(std::size_t i) const { return entries_[i]; }
  const Tensor& value(std::string_view name) const { return entries_[index(name)].value; }
  Tensor& value(std::string_view name) { return entries_[index(name)].value; }
  const Tensor& grad(std::string_view name) const { return entries_[index(name)].grad; }

  std::vector<std::string> names() const;
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  // Set by backward; cleared by adam_step.
  void mark_grads_fresh() { grads_fresh_ = true; }
  bool grads_fresh() const { return grads_fresh_; }

  std::int64_t step_count() const { return step_; }

  // Copies values only (used for best-epoch snapshots).
  std::vector<Tensor> snapshot() const;
  void restore(const std::vector<Tensor>& values);

 private:
  friend struct AdamAccess;
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> lookup_;
  std::int64_t step_ = 0;
  bool grads_fresh_ = false;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam update followed by zeroing the gradients. Throws
// NumericError when gradients have not been produced by a backward pass since
// the previous step.
void adam_step(ParamStore& params, const AdamOptions& opts = {});

// uniform(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);

}  // namespace rkt
