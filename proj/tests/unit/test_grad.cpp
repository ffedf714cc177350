#include <doctest.h>

#include <cmath>
#include <random>

#include "infodesign/grad/grad_check.hpp"
#include "infodesign/grad/ops.hpp"

using namespace infodesign::grad;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (double& v : t.data()) v = u(rng);
  return t;
}

}  // namespace

TEST_CASE("square and its derivative") {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(3.0));
  Var y = sum(x * x);
  CHECK(y.value().item() == 9.0);
  tape.backward(y);
  CHECK(tape.gradient(x).item() == 6.0);
}

TEST_CASE("logsumexp of two zeros") {
  Tape tape;
  Var x = tape.constant(Tensor::row({0.0, 0.0}));
  CHECK(logsumexp(x).value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("logsumexp does not overflow") {
  Tape tape;
  Var x = tape.constant(Tensor::row({1000.0, 1000.0}));
  CHECK(logsumexp(x).value().item() == doctest::Approx(1000.0 + std::log(2.0)));
}

TEST_CASE("softplus slope at zero is one half") {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(0.0));
  tape.backward(sum(softplus(x)));
  CHECK(tape.gradient(x).item() == 0.5);
}

TEST_CASE("two-layer tanh network matches a straight-line evaluation") {
  std::mt19937_64 rng(7);
  const Tensor in = random_tensor(rng, 4, 3);
  const Tensor w0 = random_tensor(rng, 3, 5);
  const Tensor b0 = random_tensor(rng, 1, 5);
  const Tensor w1 = random_tensor(rng, 5, 2);
  const Tensor b1 = random_tensor(rng, 1, 2);

  Tape tape;
  Var h = tanh(matmul(tape.constant(in), tape.constant(w0)) + tape.constant(b0));
  Var out = matmul(h, tape.constant(w1)) + tape.constant(b1);

  for (std::size_t r = 0; r < 4; ++r) {
    double hidden[5];
    for (std::size_t j = 0; j < 5; ++j) {
      double acc = b0(0, j);
      for (std::size_t k = 0; k < 3; ++k) acc += in(r, k) * w0(k, j);
      hidden[j] = std::tanh(acc);
    }
    for (std::size_t j = 0; j < 2; ++j) {
      double acc = b1(0, j);
      for (std::size_t k = 0; k < 5; ++k) acc += hidden[k] * w1(k, j);
      CHECK(out.value()(r, j) == doctest::Approx(acc).epsilon(1e-14));
    }
  }
}

TEST_CASE("three-layer network weight gradients match finite differences") {
  std::mt19937_64 rng(11);
  const Tensor in = random_tensor(rng, 6, 3);
  const std::size_t sizes[] = {3, 8, 8, 1};
  std::size_t total = 0;
  for (int l = 0; l < 3; ++l) total += sizes[l] * sizes[l + 1] + sizes[l + 1];
  const Tensor point = random_tensor(rng, 1, total, -0.8, 0.8);

  auto f = [&](Tape& tape, Var w) {
    Var h = tape.constant(in);
    std::size_t offset = 0;
    for (int l = 0; l < 3; ++l) {
      const std::size_t n = sizes[l] * sizes[l + 1];
      Var wl = reshape(slice_cols(w, offset, n), sizes[l], sizes[l + 1]);
      offset += n;
      Var bl = slice_cols(w, offset, sizes[l + 1]);
      offset += sizes[l + 1];
      h = matmul(h, wl) + bl;
      if (l < 2) h = tanh(h);
    }
    return sum(square(h));
  };
  const GradientReport report = grad_check(f, point);
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("grad_check on a linear function is essentially exact") {
  std::mt19937_64 rng(3);
  const Tensor coeff = random_tensor(rng, 1, 6);
  const Tensor point = random_tensor(rng, 1, 6, -5.0, 5.0);
  auto f = [&](Tape& tape, Var x) { return sum(mul(x, tape.constant(coeff))); };
  CHECK(grad_check(f, point).max_rel_error < 1e-9);
}

TEST_CASE("grad_check flags a discontinuity without throwing") {
  auto step = [](Tape&, Var x) { return x.value().item() >= 0.0 ? sum(x) : sum(x) + 1.0; };
  const GradientReport report = grad_check(step, Tensor::scalar(0.0));
  CHECK(report.max_rel_error > 0.5);
}

TEST_CASE("backward is linear in the output") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const Tensor point = random_tensor(rng, 2, 3);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    const double a = u(rng);
    const double b = u(rng);
    auto f = [](Var x) { return sum(tanh(x) * exp(x)); };
    auto g = [](Var x) { return logsumexp(x * x); };

    auto grad_of = [&](auto build) {
      Tape tape;
      Var x = tape.parameter(point);
      tape.backward(build(x));
      return tape.gradient(x);
    };
    const Tensor gf = grad_of(f);
    const Tensor gg = grad_of(g);
    const Tensor gc = grad_of([&](Var x) { return a * f(x) + b * g(x); });
    for (std::size_t i = 0; i < point.size(); ++i) {
      CHECK(gc[i] == doctest::Approx(a * gf[i] + b * gg[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("unused parameters receive exact zeros") {
  Tape tape;
  Var used = tape.parameter(Tensor::row({1.0, 2.0}));
  Var unused = tape.parameter(Tensor(2, 2, 3.0));
  tape.backward(sum(square(used)));
  const auto grads = tape.parameter_gradients();
  REQUIRE(grads.size() == 2);
  CHECK(grads[1] == Tensor(2, 2, 0.0));
}

TEST_CASE("every op kind passes the gradient check at random points") {
  std::mt19937_64 rng(2024);
  struct Case {
    const char* name;
    ScalarFunction f;
    double lo;
    double hi;
  };
  const Tensor other(2, 3, std::vector<double>{0.3, -0.7, 1.1, 0.5, -0.2, 0.9});
  const Tensor mat(3, 2, std::vector<double>{0.4, -1.2, 0.8, 0.1, -0.6, 0.7});
  const Case cases[] = {
      {"add", [&](Tape& t, Var x) { return sum(square(x + t.constant(other))); }, -2, 2},
      {"sub", [&](Tape& t, Var x) { return sum(square(x - t.constant(other))); }, -2, 2},
      {"mul", [&](Tape& t, Var x) { return sum(x * x * t.constant(other)); }, -2, 2},
      {"div", [&](Tape& t, Var x) { return sum(t.constant(other) / (square(x) + 1.0)); }, -2, 2},
      {"matmul", [&](Tape& t, Var x) { return sum(square(matmul(x, t.constant(mat)))); }, -2, 2},
      {"tanh", [](Tape&, Var x) { return sum(tanh(x)); }, -2, 2},
      {"softplus", [](Tape&, Var x) { return sum(softplus(x)); }, -4, 4},
      {"sigmoid", [](Tape&, Var x) { return sum(sigmoid(x)); }, -4, 4},
      {"exp", [](Tape&, Var x) { return sum(exp(x)); }, -2, 2},
      {"log", [](Tape&, Var x) { return sum(log(x)); }, 0.2, 3},
      {"sum", [](Tape&, Var x) { return sum(x) * sum(x); }, -2, 2},
      {"mean", [](Tape&, Var x) { return mean(square(x)); }, -2, 2},
      {"logsumexp", [](Tape&, Var x) { return logsumexp(x); }, -3, 3},
      {"logsumexp_rows", [](Tape&, Var x) { return sum(square(logsumexp_rows(x))); }, -3, 3},
      {"row_sum", [](Tape&, Var x) { return sum(square(row_sum(x))); }, -2, 2},
      {"gather", [](Tape&, Var x) { return sum(square(gather_rows(x, {1, 0, 1}))); }, -2, 2},
      {"concat", [](Tape&, Var x) { return sum(tanh(concat_cols(x, square(x)))); }, -2, 2},
      {"slice", [](Tape&, Var x) { return sum(exp(slice_cols(x, 1, 2))); }, -2, 2},
      {"affine", [](Tape&, Var x) {
         const double s[] = {2.0, -1.0, 0.5};
         const double b[] = {0.1, 0.2, -0.3};
         return sum(square(affine_cols(x, s, b)));
       }, -2, 2},
  };
  for (const Case& c : cases) {
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
      worst = std::max(worst, grad_check(c.f, random_tensor(rng, 2, 3, c.lo, c.hi)).max_rel_error);
    }
    INFO(c.name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("non-finite intermediates report the node") {
  Tape tape;
  Var x = tape.constant(Tensor::scalar(-1.0));
  try {
    log(x);
    FAIL("expected NonFiniteError");
  } catch (const NonFiniteError& e) {
    CHECK(e.node() == 1);
    CHECK(e.op() == OpKind::Log);
  }
}

TEST_CASE("shape mismatches are rejected") {
  Tape tape;
  Var a = tape.constant(Tensor(2, 3));
  Var b = tape.constant(Tensor(3, 2));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK_THROWS_AS(Tensor(2, 2, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("backward requires a scalar output and a valid node") {
  Tape tape;
  Var x = tape.parameter(Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(x), ShapeError);
  CHECK_THROWS_AS(tape.backward(Var{}), TapeError);
}

TEST_CASE("replaying a tape with new inputs matches a fresh recording") {
  Tape tape;
  Var x = tape.constant(Tensor::row({0.5, -1.0}));
  Var y = logsumexp(tanh(x) * 3.0);
  InputMap inputs;
  inputs.emplace(x.id(), Tensor::row({2.0, 0.25}));
  const Tensor replayed = forward(tape, inputs, y);

  Tape fresh;
  Var z = logsumexp(tanh(fresh.constant(Tensor::row({2.0, 0.25}))) * 3.0);
  CHECK(replayed == z.value());
}

TEST_CASE("identical inputs give bit-identical values and gradients") {
  auto run = [] {
    std::mt19937_64 rng(99);
    Tape tape;
    Var w = tape.parameter(random_tensor(rng, 4, 4));
    Var x = tape.constant(random_tensor(rng, 8, 4));
    Var out = mean(softplus(matmul(tanh(matmul(x, w)), w)));
    tape.backward(out);
    return std::pair{out.value(), tape.gradient(w)};
  };
  CHECK(run() == run());
}

TEST_CASE("straight-through passes the path gradient") {
  Tape tape;
  Var x = tape.parameter(Tensor::scalar(2.0));
  Var st = straight_through(Tensor::scalar(10.0), x * 3.0);
  CHECK(st.value().item() == 10.0);
  tape.backward(sum(st));
  CHECK(tape.gradient(x).item() == 3.0);
}
