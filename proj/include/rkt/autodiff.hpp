#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rkt/params.hpp"
#include "rkt/tensor.hpp"

namespace rkt {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
};

/// Append-only record of executed primitives. Nodes are created in execution
/// order, so reverse insertion order is a valid topological order for the
/// backward sweep.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a ParamStore entry; repeated lookups return the same leaf.
  Var param(ParamStore& store, std::string_view name);
  Var param(ParamStore& store, std::size_t index);

  // Used by primitives. `fn` is dropped when no input requires a gradient.
  Var push(Tensor value, bool requires_grad, BackwardFn fn);

  const Tensor& value(std::uint32_t id) const { return nodes_[id].value; }
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  // Lazily zero-initialised gradient buffer of a node.
  Tensor& grad(std::uint32_t id);

  // Fills dloss/dparam for every bound ParamStore. Unreached parameters end
  // with zero gradient.
  void backward(Var loss);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  void clear();

  // Kink bookkeeping for gradient checks: every ReLU / |x| input contributes
  // its sign pattern to a running hash and its smallest magnitude.
  void set_track_kinks(bool on) { track_kinks_ = on; }
  void note_kink_inputs(std::span<const double> pre);
  std::uint64_t kink_signature() const { return kink_hash_; }
  double min_kink_margin() const { return kink_margin_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    BackwardFn backward;
    ParamStore* store = nullptr;
    std::size_t param_index = 0;
  };

  std::deque<Node> nodes_;
  std::unordered_map<const ParamStore*, std::unordered_map<std::size_t, std::uint32_t>> param_leaves_;
  bool grad_enabled_;
  bool track_kinks_ = false;
  std::uint64_t kink_hash_ = 1469598103934665603ULL;
  double kink_margin_ = 1e300;
};

// Element-wise arithmetic with numpy broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var shift(Var a, double c);

// Batched matrix product over the last two axes; leading axes broadcast.
Var matmul(Var a, Var b);
// x [..., k] times w [k, n] plus bias b [n], optionally rectified, as one node.
Var linear(Var x, Var w, Var b, bool relu_out = false);
Var transpose_last2(Var a);
Var permute(Var a, const std::vector<std::size_t>& perm);
Var reshape(Var a, Shape shape);
Var broadcast_to(Var a, const Shape& shape);

Var relu(Var a);
Var exp(Var a);
Var sigmoid(Var a);
Var softmax_last(Var a);

Var concat_last(Var a, Var b);
Var slice(Var a, int axis, std::size_t start, std::size_t length);
// out[..., i, j*D + d] = a[..., idx[i*fan + j], d], or 0 where idx < 0.
// Used to lower small 2D convolutions on a cell grid to a matmul.
Var neighbor_gather(Var a, const std::vector<std::int64_t>& idx, std::size_t fan);

Var sum(Var a);
Var mean_abs(Var a);
// Mean of |a| over entries where weight != 0. Throws when all are excluded.
Var mean_abs_masked(Var a, const Tensor& weight);

}  // namespace rkt
