#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "speednet/ops.hpp"
#include "speednet/rng.hpp"
#include "speednet/tensor.hpp"

using namespace speednet;

static Tensor randt(const Shape& s, Rng& rng, bool rg = false) {
  std::vector<real> v(static_cast<size_t>(shape_numel(s)));
  for (auto& x : v) x = static_cast<real>(rng.normal());
  return Tensor::create(s, v, rg);
}

TEST_CASE("create: zero fill") {
  Tensor t = Tensor::create({2, 2}, real(0));
  CHECK(t.values() == std::vector<real>{0, 0, 0, 0});
}

TEST_CASE("create: verbatim copy") {
  Tensor t = Tensor::create({3}, std::vector<real>{1, 2, 3});
  CHECK(t.values() == std::vector<real>{1, 2, 3});
}

TEST_CASE("create: length mismatch rejected") {
  CHECK_THROWS_AS(Tensor::create({2, 3}, std::vector<real>{1, 2, 3, 4, 5}),
                  std::invalid_argument);
  CHECK_THROWS_AS(Tensor::create({0, 3}), std::invalid_argument);
}

TEST_CASE("elementwise: add, annihilator, self-subtraction") {
  Tensor a = Tensor::create({2}, std::vector<real>{1, 2});
  Tensor b = Tensor::create({2}, std::vector<real>{3, 4});
  CHECK(add(a, b).values() == std::vector<real>{4, 6});

  Rng rng(3);
  Tensor x = randt({5}, rng, true);
  Tensor z = Tensor::create({5}, real(0));
  Tensor prod = mul(x, z);
  for (real v : prod.values()) CHECK(v == real(0));
  backward(sum(prod));
  for (real g : x.grad()) CHECK(g == real(0));

  Tensor d = sub(x, x);
  for (real v : d.values()) CHECK(v == real(0));
}

TEST_CASE("elementwise: shape mismatch rejected") {
  CHECK_THROWS_AS(add(Tensor::create({2}), Tensor::create({3})), std::invalid_argument);
}

TEST_CASE("matmul: identity, hand case, oracle") {
  Tensor eye = Tensor::create({2, 2}, std::vector<real>{1, 0, 0, 1});
  Rng rng(1);
  Tensor b = randt({2, 4}, rng);
  Tensor ib = matmul(eye, b);
  for (int64_t i = 0; i < 8; ++i) CHECK(ib.at(i) == b.at(i));

  Tensor a = Tensor::create({2, 2}, std::vector<real>{1, 2, 3, 4});
  Tensor ones = Tensor::create({2, 1}, std::vector<real>{1, 1});
  Tensor r = matmul(a, ones);
  CHECK(r.at(0) == real(3));
  CHECK(r.at(1) == real(7));

  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng g(seed);
    Tensor x = randt({4, 5}, g), y = randt({5, 3}, g);
    std::vector<double> xd(x.values().begin(), x.values().end());
    std::vector<double> yd(y.values().begin(), y.values().end());
    auto ref = oracles::naive_matmul(xd, yd, 4, 5, 3);
    Tensor z = matmul(x, y);
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(static_cast<double>(z.at(static_cast<int64_t>(i))) - ref[i]) < 1e-12);
  }

  CHECK_THROWS_AS(matmul(Tensor::create({2, 3}), Tensor::create({2, 3})),
                  std::invalid_argument);
}

TEST_CASE("backward: sum gives ones, quadratic gives 2x") {
  Tensor x = Tensor::create({3}, std::vector<real>{5, -1, 2}, true);
  backward(sum(x));
  CHECK(x.grad() == std::vector<real>{1, 1, 1});

  Tensor y = Tensor::create({2}, std::vector<real>{2, -3}, true);
  backward(sum(mul(y, y)));
  CHECK(y.grad() == std::vector<real>{4, -6});
}

TEST_CASE("backward: rejects non-scalar loss") {
  Tensor x = Tensor::create({3}, real(1), true);
  CHECK_THROWS_AS(backward(scale(x, 2)), std::invalid_argument);
}

TEST_CASE("backward: accumulation doubles the gradient") {
  Rng rng(9);
  Tensor x = randt({4}, rng, true);
  Tensor loss = sum(mul(x, x));
  backward(loss);
  std::vector<real> once = x.grad();
  Tensor loss2 = sum(mul(x, x));
  backward(loss2);
  for (size_t i = 0; i < once.size(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(2 * once[i]).epsilon(1e-14));
}

TEST_CASE("operations leave input data untouched") {
  Rng rng(4);
  Tensor x = randt({3, 3}, rng, true);
  std::vector<real> before = x.values();
  Tensor y = relu(mul(add(x, x), x));
  backward(sum(y));
  CHECK(x.values() == before);
}

TEST_CASE("computation tape records inputs before consumers") {
  Rng rng(5);
  Tensor a = randt({2, 2}, rng, true);
  Tensor b = randt({2, 2}, rng, true);
  Tensor loss = sum(mul(add(a, b), a));
  ComputationTape tape(loss);
  std::unordered_set<const TensorNode*> seen;
  for (const auto& n : tape.nodes()) {
    for (const auto& p : n->parents) CHECK(seen.count(p.get()) == 1);
    seen.insert(n.get());
  }
  CHECK(tape.nodes().back().get() == loss.node().get());
}

TEST_CASE("finite differences: sum of squares and linear forms") {
  Tensor x = Tensor::create({2}, std::vector<real>{1, 2});
  auto f = [](const Tensor& t) {
    real s = 0;
    for (real v : t.values()) s += v * v;
    return s;
  };
  Tensor g = finite_difference_gradient(f, x);
  CHECK(g.at(0) == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(g.at(1) == doctest::Approx(4.0).epsilon(1e-8));

  const std::vector<real> c{3, -2, real(0.5)};
  Tensor y = Tensor::create({3}, std::vector<real>{1, 1, 1});
  auto lin = [&](const Tensor& t) {
    real s = 0;
    for (size_t i = 0; i < c.size(); ++i) s += c[i] * t.values()[i];
    return s;
  };
  Tensor gl = finite_difference_gradient(lin, y);
  for (size_t i = 0; i < c.size(); ++i)
    CHECK(gl.at(static_cast<int64_t>(i)) == doctest::Approx(c[i]).epsilon(1e-10));

  CHECK_THROWS_AS(finite_difference_gradient(f, x, real(0)), std::invalid_argument);
}

TEST_CASE("analytic gradients match finite differences on composites") {
  for (uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor x = randt({3, 4}, rng, true);
    Tensor w = randt({4, 2}, rng);
    auto fwd = [&](const Tensor& t) { return sum(relu(matmul(t, w))).at(0); };
    backward(sum(relu(matmul(x, w))));
    Tensor fd = finite_difference_gradient(fwd, x);
    for (size_t i = 0; i < fd.values().size(); ++i) {
      const real a = x.grad()[i], f = fd.values()[i];
      const real denom = std::max<real>({real(1), std::abs(a), std::abs(f)});
      CHECK(std::abs(a - f) / denom < real(1e-5));
    }
    x.clear_grad();
  }
}

TEST_CASE("rng: splits are independent of draw order and reproducible") {
  Rng a(42), b(42);
  CHECK(a.next_u64() == b.next_u64());
  Rng c1 = a.split(7);
  (void)a.next_u64();
  Rng c2 = a.split(7);
  CHECK(c1.next_u64() == c2.next_u64());
  double v = Rng(42).split(3).next_double();
  CHECK(v >= 0.0);
  CHECK(v < 1.0);
}
