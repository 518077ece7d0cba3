#include "rkt/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rkt/errors.hpp"

namespace rkt {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

// Strides of `in` expressed along the axes of `out` (0 on broadcast axes).
std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> st(r, 0);
  std::size_t s = 1;
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::size_t i = in.size() - 1 - k;
    const std::size_t o = r - 1 - k;
    if (in[i] != 1) st[o] = s;
    s *= in[i];
  }
  return st;
}

// Visits the index space of `out` in row-major order, one innermost run at a
// time: f(out_offset, a_offset, b_offset, run_length, a_step, b_step).
template <class F>
void walk2(const Shape& out, const std::vector<std::size_t>& sa, const std::vector<std::size_t>& sb, F&& f) {
  const std::size_t r = out.size();
  if (r == 0) {
    f(std::size_t{0}, std::size_t{0}, std::size_t{0}, std::size_t{1}, std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t inner = out[r - 1];
  const std::size_t outer = numel(out) / inner;
  std::vector<std::size_t> idx(r, 0);
  std::size_t ao = 0;
  std::size_t bo = 0;
  for (std::size_t o = 0; o < outer; ++o) {
    f(o * inner, ao, bo, inner, sa[r - 1], sb[r - 1]);
    for (std::size_t d = r - 1; d-- > 0;) {
      ao += sa[d];
      bo += sb[d];
      if (++idx[d] < out[d]) break;
      ao -= sa[d] * out[d];
      bo -= sb[d] * out[d];
      idx[d] = 0;
    }
  }
}

void accumulate(Tensor& dst, const Tensor& src) {
  auto d = dst.data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

Shape batch_of(const Shape& s) { return Shape(s.begin(), s.end() - 2); }

enum class BinOp { Add, Sub, Mul };

Var binary(Var a, Var b, BinOp op) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const bool same = A.shape() == B.shape();
  const Shape out_shape = same ? A.shape() : broadcast_shapes(A.shape(), B.shape());
  Tensor out(out_shape);
  auto o = out.data();
  auto x = A.data();
  auto y = B.data();
  if (same) {
    for (std::size_t i = 0; i < o.size(); ++i) {
      o[i] = op == BinOp::Add ? x[i] + y[i] : op == BinOp::Sub ? x[i] - y[i] : x[i] * y[i];
    }
  } else {
    const auto sa = aligned_strides(A.shape(), out_shape);
    const auto sb = aligned_strides(B.shape(), out_shape);
    walk2(out_shape, sa, sb, [&](std::size_t oo, std::size_t ao, std::size_t bo, std::size_t n, std::size_t da, std::size_t db) {
      for (std::size_t j = 0; j < n; ++j) {
        const double u = x[ao + j * da];
        const double v = y[bo + j * db];
        o[oo + j] = op == BinOp::Add ? u + v : op == BinOp::Sub ? u - v : u * v;
      }
    });
  }
  const bool rg = a.requires_grad() || b.requires_grad();
  const std::uint32_t ia = a.id;
  const std::uint32_t ib = b.id;
  return tape.push(std::move(out), rg, [ia, ib, op, same, out_shape](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    auto gd = g.data();
    const bool need_a = t.requires_grad(ia);
    const bool need_b = t.requires_grad(ib);
    if (same) {
      if (need_a) {
        auto ga = t.grad(ia).data();
        if (op == BinOp::Mul) {
          auto y = B.data();
          for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i] * y[i];
        } else {
          for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
        }
      }
      if (need_b) {
        auto gb = t.grad(ib).data();
        if (op == BinOp::Mul) {
          auto x = A.data();
          for (std::size_t i = 0; i < gd.size(); ++i) gb[i] += gd[i] * x[i];
        } else if (op == BinOp::Sub) {
          for (std::size_t i = 0; i < gd.size(); ++i) gb[i] -= gd[i];
        } else {
          for (std::size_t i = 0; i < gd.size(); ++i) gb[i] += gd[i];
        }
      }
      return;
    }
    const auto sa = aligned_strides(A.shape(), out_shape);
    const auto sb = aligned_strides(B.shape(), out_shape);
    auto x = A.data();
    auto y = B.data();
    if (need_a) {
      auto ga = t.grad(ia).data();
      walk2(out_shape, sa, sb, [&](std::size_t oo, std::size_t ao, std::size_t bo, std::size_t n, std::size_t da, std::size_t db) {
        for (std::size_t j = 0; j < n; ++j) {
          ga[ao + j * da] += op == BinOp::Mul ? gd[oo + j] * y[bo + j * db] : gd[oo + j];
        }
      });
    }
    if (need_b) {
      auto gb = t.grad(ib).data();
      walk2(out_shape, sa, sb, [&](std::size_t oo, std::size_t ao, std::size_t bo, std::size_t n, std::size_t da, std::size_t db) {
        for (std::size_t j = 0; j < n; ++j) {
          const double gv = gd[oo + j];
          gb[bo + j * db] += op == BinOp::Mul ? gv * x[ao + j * da] : op == BinOp::Sub ? -gv : gv;
        }
      });
    }
  });
}

template <class Fwd, class Bwd>
Var unary(Var a, Fwd fwd, Bwd bwd) {
  Tape& tape = *a.tape;
  const Tensor& A = a.value();
  Tensor out(A.shape());
  auto x = A.data();
  auto y = out.data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = fwd(x[i]);
  const std::uint32_t ia = a.id;
  const std::uint32_t iy = static_cast<std::uint32_t>(tape.size());
  return tape.push(std::move(out), a.requires_grad(), [ia, iy, bwd](Tape& t, const Tensor& g) {
    auto x = t.value(ia).data();
    auto y = t.value(iy).data();
    auto gd = g.data();
    auto ga = t.grad(ia).data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i] * bwd(x[i], y[i]);
  });
}

}  // namespace

// ---------------------------------------------------------------------------
// Var / Tape

const Tensor& Var::value() const { return tape->value(id); }
bool Var::requires_grad() const { return tape->requires_grad(id); }

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = grad_enabled_ && requires_grad;
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::param(ParamStore& store, std::string_view name) { return param(store, store.index(name)); }

Var Tape::param(ParamStore& store, std::size_t index) {
  auto& leaves = param_leaves_[&store];
  if (auto it = leaves.find(index); it != leaves.end()) return Var{this, it->second};
  Var v = push(store.entry(index).value, true, nullptr);
  nodes_[v.id].store = &store;
  nodes_[v.id].param_index = index;
  leaves.emplace(index, v.id);
  return v;
}

Tensor& Tape::grad(std::uint32_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) throw NumericError("backward on an empty computation record");
  if (loss.tape != this) throw ShapeError("loss belongs to a different computation record");
  if (value(loss.id).size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(value(loss.id).shape()));
  }
  for (auto& [store, leaves] : param_leaves_) {
    const_cast<ParamStore*>(store)->zero_grad();
  }
  if (nodes_[loss.id].requires_grad) {
    grad(loss.id).fill(1.0);
    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
      Node& n = nodes_[id];
      if (!n.has_grad) continue;
      if (n.backward) n.backward(*this, n.grad);
      if (n.store != nullptr) accumulate(n.store->entry(n.param_index).grad, n.grad);
    }
  }
  for (auto& [store, leaves] : param_leaves_) {
    const_cast<ParamStore*>(store)->mark_grads_fresh();
  }
}

void Tape::clear() {
  nodes_.clear();
  param_leaves_.clear();
  kink_hash_ = 1469598103934665603ULL;
  kink_margin_ = 1e300;
}

void Tape::note_kink_inputs(std::span<const double> pre) {
  if (!track_kinks_) return;
  for (double x : pre) {
    kink_hash_ = (kink_hash_ ^ static_cast<std::uint64_t>(x > 0.0)) * 1099511628211ULL;
    kink_margin_ = std::min(kink_margin_, std::abs(x));
  }
}

// ---------------------------------------------------------------------------
// Element-wise

Var add(Var a, Var b) { return binary(a, b, BinOp::Add); }
Var sub(Var a, Var b) { return binary(a, b, BinOp::Sub); }
Var mul(Var a, Var b) { return binary(a, b, BinOp::Mul); }

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var shift(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var relu(Var a) {
  a.tape->note_kink_inputs(a.value().data());
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var sigmoid(Var a) {
  return unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

// ---------------------------------------------------------------------------
// Matrix products and layout

Var matmul(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() < 2 || B.rank() < 2 || A.dim(-1) != B.dim(-2)) {
    throw ShapeError("matmul: incompatible shapes " + to_string(A.shape()) + " and " + to_string(B.shape()));
  }
  const std::size_t m = A.dim(-2);
  const std::size_t k = A.dim(-1);
  const std::size_t n = B.dim(-1);
  Shape batch;
  try {
    batch = broadcast_shapes(batch_of(A.shape()), batch_of(B.shape()));
  } catch (const ShapeError&) {
    throw ShapeError("matmul: batch extents of " + to_string(A.shape()) + " and " + to_string(B.shape()) +
                     " are not broadcastable");
  }
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  Tensor out(out_shape);

  const bool flat_b = B.rank() == 2 && batch == batch_of(A.shape());
  std::vector<std::pair<std::size_t, std::size_t>> offs;
  if (flat_b) {
    const std::size_t rows = numel(batch) * m;
    MMap(out.data().data(), rows, n).noalias() = CMap(A.data().data(), rows, k) * CMap(B.data().data(), k, n);
  } else {
    const auto sa = aligned_strides(batch_of(A.shape()), batch);
    const auto sb = aligned_strides(batch_of(B.shape()), batch);
    const std::size_t nb = numel(batch);
    offs.reserve(nb);
    if (batch.empty()) {
      offs.emplace_back(0, 0);
    } else {
      walk2(batch, sa, sb, [&](std::size_t, std::size_t ao, std::size_t bo, std::size_t len, std::size_t da, std::size_t db) {
        for (std::size_t j = 0; j < len; ++j) offs.emplace_back(ao + j * da, bo + j * db);
      });
    }
    for (std::size_t i = 0; i < nb; ++i) {
      MMap(out.data().data() + i * m * n, m, n).noalias() =
          CMap(A.data().data() + offs[i].first * m * k, m, k) * CMap(B.data().data() + offs[i].second * k * n, k, n);
    }
  }
  const std::uint32_t ia = a.id;
  const std::uint32_t ib = b.id;
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape->push(std::move(out), rg, [ia, ib, m, k, n, flat_b, offs = std::move(offs)](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    const bool need_a = t.requires_grad(ia);
    const bool need_b = t.requires_grad(ib);
    if (flat_b) {
      const std::size_t rows = A.size() / k;
      CMap G(g.data().data(), rows, n);
      if (need_a) MMap(t.grad(ia).data().data(), rows, k).noalias() += G * CMap(B.data().data(), k, n).transpose();
      if (need_b) MMap(t.grad(ib).data().data(), k, n).noalias() += CMap(A.data().data(), rows, k).transpose() * G;
      return;
    }
    double* ga = need_a ? t.grad(ia).data().data() : nullptr;
    double* gb = need_b ? t.grad(ib).data().data() : nullptr;
    for (std::size_t i = 0; i < offs.size(); ++i) {
      CMap G(g.data().data() + i * m * n, m, n);
      if (ga) {
        MMap(ga + offs[i].first * m * k, m, k).noalias() +=
            G * CMap(B.data().data() + offs[i].second * k * n, k, n).transpose();
      }
      if (gb) {
        MMap(gb + offs[i].second * k * n, k, n).noalias() +=
            CMap(A.data().data() + offs[i].first * m * k, m, k).transpose() * G;
      }
    }
  });
}

Var linear(Var x, Var w, Var b, bool relu_out) {
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const Tensor& Bv = b.value();
  if (X.rank() < 1 || W.rank() != 2 || X.dim(-1) != W.dim(0) || Bv.shape() != Shape{W.dim(1)}) {
    throw ShapeError("linear: input " + to_string(X.shape()) + ", weight " + to_string(W.shape()) + ", bias " +
                     to_string(Bv.shape()));
  }
  const std::size_t k = W.dim(0);
  const std::size_t n = W.dim(1);
  const std::size_t rows = X.size() / k;
  Shape out_shape = X.shape();
  out_shape.back() = n;
  Tensor out(out_shape);
  MMap O(out.data().data(), rows, n);
  O.noalias() = CMap(X.data().data(), rows, k) * CMap(W.data().data(), k, n);
  O.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(Bv.data().data(), n);
  if (relu_out) {
    x.tape->note_kink_inputs(out.data());
    O = O.cwiseMax(0.0);
  }
  const std::uint32_t ix = x.id;
  const std::uint32_t iw = w.id;
  const std::uint32_t ib = b.id;
  const bool rg = x.requires_grad() || w.requires_grad() || b.requires_grad();
  const std::uint32_t iy = static_cast<std::uint32_t>(x.tape->size());
  return x.tape->push(std::move(out), rg, [ix, iw, ib, iy, rows, k, n, relu_out](Tape& t, const Tensor& g) {
    RowMat masked;
    if (relu_out) {
      masked = CMap(g.data().data(), rows, n).cwiseProduct(
          (CMap(t.value(iy).data().data(), rows, n).array() > 0.0).cast<double>().matrix());
    }
    CMap G(relu_out ? masked.data() : g.data().data(), rows, n);
    if (t.requires_grad(ix)) {
      MMap(t.grad(ix).data().data(), rows, k).noalias() += G * CMap(t.value(iw).data().data(), k, n).transpose();
    }
    if (t.requires_grad(iw)) {
      MMap(t.grad(iw).data().data(), k, n).noalias() += CMap(t.value(ix).data().data(), rows, k).transpose() * G;
    }
    if (t.requires_grad(ib)) {
      Eigen::Map<Eigen::RowVectorXd>(t.grad(ib).data().data(), n) += G.colwise().sum();
    }
  });
}

Var permute(Var a, const std::vector<std::size_t>& perm) {
  const Tensor& A = a.value();
  const std::size_t r = A.rank();
  if (perm.size() != r) throw ShapeError("permute: order of rank " + std::to_string(perm.size()) + " for " + to_string(A.shape()));
  std::vector<bool> seen(r, false);
  for (auto p : perm) {
    if (p >= r || seen[p]) throw ShapeError("permute: invalid axis order");
    seen[p] = true;
  }
  std::vector<std::size_t> in_strides(r, 1);
  for (std::size_t i = r; i-- > 1;) in_strides[i - 1] = in_strides[i] * A.shape()[i];
  Shape out_shape(r);
  std::vector<std::size_t> st(r);
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = A.shape()[perm[i]];
    st[i] = in_strides[perm[i]];
  }
  Tensor out(out_shape);
  auto x = A.data();
  auto y = out.data();
  const std::vector<std::size_t> zeros(r, 0);
  walk2(out_shape, st, zeros, [&](std::size_t oo, std::size_t io, std::size_t, std::size_t n, std::size_t di, std::size_t) {
    for (std::size_t j = 0; j < n; ++j) y[oo + j] = x[io + j * di];
  });
  const std::uint32_t ia = a.id;
  return a.tape->push(std::move(out), a.requires_grad(), [ia, out_shape, st, zeros](Tape& t, const Tensor& g) {
    auto gd = g.data();
    auto ga = t.grad(ia).data();
    walk2(out_shape, st, zeros, [&](std::size_t oo, std::size_t io, std::size_t, std::size_t n, std::size_t di, std::size_t) {
      for (std::size_t j = 0; j < n; ++j) ga[io + j * di] += gd[oo + j];
    });
  });
}

Var transpose_last2(Var a) {
  const std::size_t r = a.value().rank();
  if (r < 2) throw ShapeError("transpose_last2 needs rank >= 2, got " + to_string(a.shape()));
  std::vector<std::size_t> perm(r);
  std::iota(perm.begin(), perm.end(), 0);
  std::swap(perm[r - 1], perm[r - 2]);
  return permute(a, perm);
}

Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::uint32_t ia = a.id;
  return a.tape->push(std::move(out), a.requires_grad(), [ia](Tape& t, const Tensor& g) {
    auto gd = g.data();
    auto ga = t.grad(ia).data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
  });
}

Var broadcast_to(Var a, const Shape& shape) {
  const Tensor& A = a.value();
  if (broadcast_shapes(A.shape(), shape) != shape) {
    throw ShapeError("cannot broadcast " + to_string(A.shape()) + " to " + to_string(shape));
  }
  const auto sa = aligned_strides(A.shape(), shape);
  const std::vector<std::size_t> zeros(shape.size(), 0);
  Tensor out(shape);
  auto x = A.data();
  auto y = out.data();
  walk2(shape, sa, zeros, [&](std::size_t oo, std::size_t ao, std::size_t, std::size_t n, std::size_t da, std::size_t) {
    for (std::size_t j = 0; j < n; ++j) y[oo + j] = x[ao + j * da];
  });
  const std::uint32_t ia = a.id;
  return a.tape->push(std::move(out), a.requires_grad(), [ia, shape, sa, zeros](Tape& t, const Tensor& g) {
    auto gd = g.data();
    auto ga = t.grad(ia).data();
    walk2(shape, sa, zeros, [&](std::size_t oo, std::size_t ao, std::size_t, std::size_t n, std::size_t da, std::size_t) {
      for (std::size_t j = 0; j < n; ++j) ga[ao + j * da] += gd[oo + j];
    });
  });
}

// ---------------------------------------------------------------------------
// Softmax, concatenation, slicing

Var softmax_last(Var a) {
  const Tensor& A = a.value();
  if (A.rank() == 0) throw ShapeError("softmax_last on a scalar");
  const std::size_t n = A.dim(-1);
  const std::size_t rows = A.size() / n;
  Tensor out(A.shape());
  auto x = A.data();
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * n;
    double* yr = y.data() + r * n;
    const double mx = *std::max_element(xr, xr + n);
    if (mx == -std::numeric_limits<double>::infinity()) {
      throw NumericError("softmax row has every entry masked to -inf");
    }
    Eigen::Map<Eigen::ArrayXd> yv(yr, static_cast<Eigen::Index>(n));
    yv = (Eigen::Map<const Eigen::ArrayXd>(xr, static_cast<Eigen::Index>(n)) - mx).exp();
    yv *= 1.0 / yv.sum();
  }
  const std::uint32_t ia = a.id;
  const std::uint32_t iy = static_cast<std::uint32_t>(a.tape->size());
  return a.tape->push(std::move(out), a.requires_grad(), [ia, iy, n, rows](Tape& t, const Tensor& g) {
    auto y = t.value(iy).data();
    auto gd = g.data();
    auto ga = t.grad(ia).data();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t o = r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += gd[o + j] * y[o + j];
      for (std::size_t j = 0; j < n; ++j) ga[o + j] += y[o + j] * (gd[o + j] - dot);
    }
  });
}

Var concat_last(Var a, Var b) {
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() == 0 || A.rank() != B.rank() || !std::equal(A.shape().begin(), A.shape().end() - 1, B.shape().begin())) {
    throw ShapeError("concat_last: " + to_string(A.shape()) + " and " + to_string(B.shape()) +
                     " differ outside the last axis");
  }
  const std::size_t da = A.dim(-1);
  const std::size_t db = B.dim(-1);
  const std::size_t rows = A.size() / da;
  Shape out_shape = A.shape();
  out_shape.back() = da + db;
  Tensor out(out_shape);
  auto y = out.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data().data() + r * da, da, y.data() + r * (da + db));
    std::copy_n(B.data().data() + r * db, db, y.data() + r * (da + db) + da);
  }
  const std::uint32_t ia = a.id;
  const std::uint32_t ib = b.id;
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape->push(std::move(out), rg, [ia, ib, da, db, rows](Tape& t, const Tensor& g) {
    auto gd = g.data();
    if (t.requires_grad(ia)) {
      auto ga = t.grad(ia).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < da; ++j) ga[r * da + j] += gd[r * (da + db) + j];
    }
    if (t.requires_grad(ib)) {
      auto gb = t.grad(ib).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < db; ++j) gb[r * db + j] += gd[r * (da + db) + da + j];
    }
  });
}

Var slice(Var a, int axis, std::size_t start, std::size_t length) {
  const Tensor& A = a.value();
  const int r = static_cast<int>(A.rank());
  const int ax = axis < 0 ? axis + r : axis;
  if (ax < 0 || ax >= r) throw ShapeError("slice: axis out of range for " + to_string(A.shape()));
  const std::size_t extent = A.shape()[static_cast<std::size_t>(ax)];
  if (length == 0 || start + length > extent) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") outside extent " +
                     std::to_string(extent));
  }
  std::size_t outer = 1;
  for (int i = 0; i < ax; ++i) outer *= A.shape()[static_cast<std::size_t>(i)];
  std::size_t inner = 1;
  for (int i = ax + 1; i < r; ++i) inner *= A.shape()[static_cast<std::size_t>(i)];
  Shape out_shape = A.shape();
  out_shape[static_cast<std::size_t>(ax)] = length;
  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(A.data().data() + (o * extent + start) * inner, length * inner, out.data().data() + o * length * inner);
  }
  const std::uint32_t ia = a.id;
  return a.tape->push(std::move(out), a.requires_grad(), [ia, outer, extent, start, length, inner](Tape& t, const Tensor& g) {
    auto gd = g.data();
    auto ga = t.grad(ia).data();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = gd.data() + o * length * inner;
      double* dst = ga.data() + (o * extent + start) * inner;
      for (std::size_t j = 0; j < length * inner; ++j) dst[j] += src[j];
    }
  });
}

Var neighbor_gather(Var a, const std::vector<std::int64_t>& idx, std::size_t fan) {
  const Tensor& A = a.value();
  if (A.rank() < 2 || fan == 0 || idx.size() % fan != 0) {
    throw ShapeError("neighbor_gather: bad input " + to_string(A.shape()) + " for fan " + std::to_string(fan));
  }
  const std::size_t n_in = A.dim(-2);
  const std::size_t d = A.dim(-1);
  const std::size_t n_out = idx.size() / fan;
  for (auto v : idx) {
    if (v >= static_cast<std::int64_t>(n_in)) throw ShapeError("neighbor_gather: index out of range");
  }
  const std::size_t batch = A.size() / (n_in * d);
  Shape out_shape = A.shape();
  out_shape[out_shape.size() - 2] = n_out;
  out_shape.back() = fan * d;
  Tensor out(out_shape);
  auto x = A.data();
  auto y = out.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < n_out; ++i) {
      for (std::size_t j = 0; j < fan; ++j) {
        const std::int64_t src = idx[i * fan + j];
        if (src < 0) continue;
        std::copy_n(x.data() + (b * n_in + static_cast<std::size_t>(src)) * d, d,
                    y.data() + ((b * n_out + i) * fan + j) * d);
      }
    }
  }
  const std::uint32_t ia = a.id;
  return a.tape->push(std::move(out), a.requires_grad(), [ia, idx, fan, n_in, n_out, d, batch](Tape& t, const Tensor& g) {
    auto gd = g.data();
    auto ga = t.grad(ia).data();
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t i = 0; i < n_out; ++i) {
        for (std::size_t j = 0; j < fan; ++j) {
          const std::int64_t src = idx[i * fan + j];
          if (src < 0) continue;
          const double* gs = gd.data() + ((b * n_out + i) * fan + j) * d;
          double* gt = ga.data() + (b * n_in + static_cast<std::size_t>(src)) * d;
          for (std::size_t k = 0; k < d; ++k) gt[k] += gs[k];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(Var a) {
  const auto x = a.value().data();
  double s = 0.0;
  for (double v : x) s += v;
  const std::uint32_t ia = a.id;
  return a.tape->push(Tensor::scalar(s), a.requires_grad(), [ia](Tape& t, const Tensor& g) {
    const double gv = g[0];
    for (auto& v : t.grad(ia).data()) v += gv;
  });
}

Var mean_abs(Var a) {
  return mean_abs_masked(a, Tensor(a.shape(), 1.0));
}

Var mean_abs_masked(Var a, const Tensor& weight) {
  const Tensor& A = a.value();
  if (weight.shape() != A.shape()) {
    throw ShapeError("mean_abs: weight shape " + to_string(weight.shape()) + " differs from " + to_string(A.shape()));
  }
  auto x = A.data();
  auto w = weight.data();
  double total_w = 0.0;
  double s = 0.0;
  std::vector<double> active;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (w[i] == 0.0) continue;
    total_w += w[i];
    s += w[i] * std::abs(x[i]);
    active.push_back(x[i]);
  }
  if (total_w <= 0.0) throw DataError("mean absolute error: every entry is excluded");
  a.tape->note_kink_inputs(active);
  const std::uint32_t ia = a.id;
  return a.tape->push(Tensor::scalar(s / total_w), a.requires_grad(), [ia, weight, total_w](Tape& t, const Tensor& g) {
    auto x = t.value(ia).data();
    auto w = weight.data();
    auto ga = t.grad(ia).data();
    const double c = g[0] / total_w;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double sgn = x[i] > 0.0 ? 1.0 : (x[i] < 0.0 ? -1.0 : 0.0);
      ga[i] += c * w[i] * sgn;
    }
  });
}

}  // namespace rkt
