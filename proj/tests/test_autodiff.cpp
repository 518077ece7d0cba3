#include <cmath>
#include <random>

#include "doctest.h"
#include "rkt/autodiff.hpp"
#include "rkt/errors.hpp"
#include "rkt/gradcheck.hpp"

using namespace rkt;

namespace {

Tensor random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t(std::move(s));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Naive triple loop on 2-D row-major arrays.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = s;
    }
  return c;
}

}  // namespace

TEST_CASE("matmul examples") {
  Tape t;
  Var eye = t.constant(Tensor::matrix({{1, 0}, {0, 1}}));
  Var m = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  CHECK(matmul(eye, m).value() == m.value());

  Var a = t.constant(Tensor::matrix({{1, 2}, {3, 4}}));
  Var b = t.constant(Tensor::matrix({{5, 6}, {7, 8}}));
  const Tensor oracle = naive_matmul(a.value(), b.value());
  CHECK(matmul(a, b).value() == oracle);
  CHECK(oracle == Tensor::matrix({{19, 22}, {43, 50}}));

  Var x = t.constant(Tensor({2, 3}));
  Var y = t.constant(Tensor({4, 5}));
  CHECK_THROWS_AS(matmul(x, y), ShapeError);
  try {
    matmul(x, y);
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("(2,3)") != std::string::npos);
    CHECK(std::string(e.what()).find("(4,5)") != std::string::npos);
  }
}

TEST_CASE("batched matmul broadcasts leading axes and matches per-slice oracle") {
  std::mt19937_64 rng(3);
  Tape t;
  Tensor a = random_tensor({2, 3, 4, 5}, rng);
  Tensor b = random_tensor({3, 5, 2}, rng);
  Tensor c = matmul(t.constant(a), t.constant(b)).value();
  REQUIRE(c.shape() == Shape{2, 3, 4, 2});
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      Tensor as({4, 5}), bs({5, 2});
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t q = 0; q < 5; ++q) as.at({r, q}) = a.at({i, j, r, q});
      for (std::size_t r = 0; r < 5; ++r)
        for (std::size_t q = 0; q < 2; ++q) bs.at({r, q}) = b.at({j, r, q});
      Tensor o = naive_matmul(as, bs);
      for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t q = 0; q < 2; ++q) CHECK(c.at({i, j, r, q}) == doctest::Approx(o.at({r, q})).epsilon(1e-14));
    }
}

TEST_CASE("softmax_last examples and invariants") {
  Tape t;
  Tensor s = softmax_last(t.constant(Tensor::vector({1, 1}))).value();
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 0.5);
  s = softmax_last(t.constant(Tensor::vector({0, std::log(3.0)}))).value();
  CHECK(s[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(s[1] == doctest::Approx(0.75).epsilon(1e-15));
  s = softmax_last(t.constant(Tensor::vector({-1e9, 0}))).value();
  CHECK(s[0] < 1e-300);
  CHECK(std::abs(s[0] + s[1] - 1.0) < 1e-12);

  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor({3, 7}, rng, -5, 5);
    Tensor y = softmax_last(t.constant(x)).value();
    Tensor xs = x;
    for (std::size_t j = 0; j < 7; ++j) xs.at({1, j}) += 3.25;
    Tensor ys = softmax_last(t.constant(xs)).value();
    for (std::size_t r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (std::size_t j = 0; j < 7; ++j) {
        sum += y.at({r, j});
        CHECK(std::abs(y.at({r, j}) - ys.at({r, j})) < 1e-12);
      }
      CHECK(std::abs(sum - 1.0) < 1e-12);
    }
  }
  CHECK_THROWS_AS(softmax_last(t.constant(Tensor::vector({-INFINITY, -INFINITY}))), NumericError);
}

TEST_CASE("elementwise examples") {
  Tape t;
  Var a = t.constant(Tensor({2, 3}, 1.0));
  Var b = t.constant(Tensor({2, 5}, 2.0));
  CHECK(concat_last(a, b).shape() == Shape{2, 8});
  CHECK(mean_abs(t.constant(Tensor::vector({1, -1, 2, 0}))).value().item() == 1.0);
  Var col = t.constant(Tensor({4, 1}, 1.0));
  Var row = t.constant(Tensor({1, 3}, 2.0));
  Tensor s = add(col, row).value();
  CHECK(s.shape() == Shape{4, 3});
  CHECK(s.at({3, 2}) == 3.0);
  CHECK_THROWS_AS(add(t.constant(Tensor({2, 3})), t.constant(Tensor({4, 3}))), ShapeError);
  CHECK_THROWS_AS(concat_last(t.constant(Tensor({2, 3})), t.constant(Tensor({3, 3}))), ShapeError);
}

TEST_CASE("backward examples") {
  ParamStore ps;
  ps.add("w", Tensor::vector({3}));
  {
    Tape t;
    Var loss = mean_abs(t.param(ps, "w"));
    t.backward(loss);
    CHECK(ps.grad("w")[0] == 1.0);
  }
  ParamStore q;
  q.add("w", Tensor::vector({1, 2}));
  q.add("unused", Tensor::vector({5, 5, 5}));
  q.entry(1).grad.fill(9.0);
  {
    Tape t;
    Var w = t.param(q, "w");
    t.param(q, "unused");
    t.backward(sum(mul(w, w)));
    CHECK(q.grad("w") == Tensor::vector({2, 4}));
    CHECK(q.grad("unused") == Tensor::vector({0, 0, 0}));
  }
  {
    Tape t;
    CHECK_THROWS_AS(t.backward(Var{&t, 0}), NumericError);
    Var w = t.param(q, "w");
    CHECK_THROWS_AS(t.backward(w), ShapeError);
  }
}

TEST_CASE("backward is linear in the loss") {
  std::mt19937_64 rng(5);
  ParamStore ps;
  ps.add("x", random_tensor({3, 4}, rng));
  ps.add("y", random_tensor({4, 2}, rng));
  auto f = [&](Tape& t) { return sum(matmul(t.param(ps, "x"), t.param(ps, "y"))); };
  auto g = [&](Tape& t) { return sum(exp(scale(t.param(ps, "x"), 0.5))); };
  auto grads = [&](auto fn) {
    Tape t;
    t.backward(fn(t));
    return std::vector<Tensor>{ps.grad("x"), ps.grad("y")};
  };
  const auto gf = grads(f);
  const auto gg = grads(g);
  const auto gc = grads([&](Tape& t) { return add(scale(f(t), 2.5), scale(g(t), -1.5)); });
  for (std::size_t p = 0; p < 2; ++p)
    for (std::size_t i = 0; i < gc[p].size(); ++i) {
      CHECK(std::abs(gc[p][i] - (2.5 * gf[p][i] - 1.5 * gg[p][i])) < 1e-12);
    }
}

TEST_CASE("adam_step examples") {
  ParamStore ps;
  ps.add("a", Tensor::vector({0.3, -0.2}));
  {
    Tape t;
    t.backward(scale(sum(t.param(ps, "a")), 0.0));
  }
  const Tensor before = ps.value("a");
  adam_step(ps, {});
  CHECK(ps.value("a") == before);
  CHECK_THROWS_AS(adam_step(ps, {}), NumericError);

  ParamStore s;
  s.add("theta", Tensor::vector({1.0}));
  {
    Tape t;
    t.backward(sum(t.param(s, "theta")));
  }
  adam_step(s, {.lr = 0.01});
  CHECK(s.value("theta")[0] == doctest::Approx(1.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-15));
  CHECK(s.step_count() == 1);
  CHECK(s.grad("theta")[0] == 0.0);
}

TEST_CASE("adam trajectory matches textbook reference") {
  // loss = sum(w^3) so gradients change every step.
  ParamStore ps;
  ps.add("w", Tensor::vector({0.5, -1.25, 2.0}));
  std::vector<double> ref{0.5, -1.25, 2.0}, m(3, 0.0), v(3, 0.0);
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (int step = 1; step <= 3; ++step) {
    Tape t;
    Var w = t.param(ps, "w");
    t.backward(sum(mul(mul(w, w), w)));
    adam_step(ps, {.lr = lr});
    for (int i = 0; i < 3; ++i) {
      const double g = 3.0 * ref[i] * ref[i];
      m[i] = b1 * m[i] + (1 - b1) * g;
      v[i] = b2 * v[i] + (1 - b2) * g * g;
      const double mh = m[i] / (1 - std::pow(b1, step));
      const double vh = v[i] / (1 - std::pow(b2, step));
      ref[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(ps.value("w")[i] - ref[i]) < 1e-12);
}

TEST_CASE("finite_diff_check examples") {
  std::mt19937_64 rng(9);
  ParamStore ps;
  ps.add("w", random_tensor({3, 2}, rng));
  Tensor x = random_tensor({4, 3}, rng);
  auto linear = [&](Tape& t) { return sum(matmul(t.constant(x), t.param(ps, "w"))); };
  CHECK(finite_diff_check(linear, ps).max_rel_error < 1e-10);

  Tensor c = random_tensor({4, 2}, rng);
  auto soft = [&](Tape& t) {
    return sum(mul(softmax_last(matmul(t.constant(x), t.param(ps, "w"))), t.constant(c)));
  };
  CHECK(finite_diff_check(soft, ps).max_rel_error < 1e-6);

  // ReLU kink: pre-activation exactly 0 on one coordinate.
  ParamStore k;
  k.add("z", Tensor::vector({0.0, 0.7, -0.4}));
  auto kink = [&](Tape& t) { return sum(relu(t.param(k, "z"))); };
  auto r = finite_diff_check(kink, k);
  CHECK(r.excluded == 1);
  CHECK(r.checked == 2);
  CHECK(r.max_rel_error < 1e-10);
}

TEST_CASE("primitive gradients match finite differences") {
  std::mt19937_64 rng(21);
  ParamStore ps;
  ps.add("a", random_tensor({2, 3, 4}, rng));
  ps.add("b", random_tensor({4}, rng));
  ps.add("c", random_tensor({3, 1}, rng));
  Tensor weights = random_tensor({2, 3, 3}, rng);
  std::vector<std::int64_t> idx{2, -1, 0, 1, 1, 2};
  auto f = [&](Tape& t) {
    Var a = t.param(ps, "a");
    Var b = t.param(ps, "b");
    Var c = t.param(ps, "c");
    Var h = add(mul(a, b), c);                       // broadcasting mul/add
    h = sub(h, scale(sigmoid(h), 0.3));
    h = permute(h, {1, 0, 2});                       // (3,2,4)
    h = concat_last(h, exp(scale(h, 0.2)));         // (3,2,8)
    h = slice(h, 2, 1, 5);                           // (3,2,5)
    h = reshape(h, {2, 3, 5});
    h = neighbor_gather(h, idx, 2);                  // (2,3,10)
    h = matmul(h, transpose_last2(h));               // (2,3,3)
    h = softmax_last(h);
    Var bb = broadcast_to(b, {3, 4});
    return add(sum(mul(h, t.constant(weights))), sum(mul(bb, bb)));
  };
  auto r = finite_diff_check(f, ps);
  CHECK(r.checked > 0);
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("replaying a forward is bitwise deterministic") {
  std::mt19937_64 rng(2);
  ParamStore ps;
  ps.add("w", random_tensor({5, 5}, rng));
  Tensor x = random_tensor({3, 5}, rng);
  auto run = [&] {
    Tape t;
    return softmax_last(relu(matmul(t.constant(x), t.param(ps, "w")))).value();
  };
  CHECK(run() == run());
}
