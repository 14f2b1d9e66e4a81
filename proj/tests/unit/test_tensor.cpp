#include "doctest.h"
#include "oracles.hpp"

#include "wsx/tensor.hpp"

#include <random>

using namespace wsx;
using wsx::oracle::Vec;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& x : t.values()) x = u(rng);
  return t;
}

// Gradient of sum(r * f(inputs)) w.r.t. input `which`, analytic vs central differences.
double grad_check(const std::function<Var(std::vector<Var>&)>& f, std::vector<Tensor> inputs, std::size_t which,
                  std::mt19937_64& rng) {
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(Var(inputs[i], i == which));
  Var out = f(vars);
  Var weights = Var::constant(random_tensor(out.shape(), rng));
  backward(dot(out, weights));
  const Tensor analytic = vars[which].grad();

  auto eval = [&](const Vec& x) {
    std::vector<Var> vs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      vs.push_back(Var::constant(i == which ? Tensor(inputs[i].shape(), x) : inputs[i]));
    }
    return dot(f(vs), weights).value().item();
  };
  const Vec numeric = oracle::finite_diff(eval, oracle::to_vec(inputs[which].values()), 1e-5);
  return oracle::rel_error(analytic.values(), numeric);
}

}  // namespace

TEST_CASE("matmul shape algebra") {
  Var a = Var::constant(Tensor({2, 3}, 1.0));
  Var b = Var::constant(Tensor({3, 4}, 1.0));
  Var c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 4});
  CHECK(c.value().at(1, 3) == doctest::Approx(3.0));
}

TEST_CASE("shape mismatch names the op and dims") {
  Var a = Var::constant(Tensor({2, 3}, 1.0));
  Var b = Var::constant(Tensor({2, 3}, 1.0));
  try {
    matmul(a, b);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("(2,3)") != std::string::npos);
  }
  CHECK_THROWS_AS(add(a, Var::constant(Tensor({3, 2}))), Error);
}

TEST_CASE("tanh at origin") {
  Var x = Var::parameter(Tensor::scalar(0.0));
  Var y = tanh(x);
  CHECK(y.value().item() == 0.0);
  backward(y);
  CHECK(x.grad().item() == doctest::Approx(1.0));
}

TEST_CASE("derivative of x*x") {
  Var x = Var::parameter(Tensor::scalar(3.0));
  backward(mul(x, x));
  CHECK(x.grad().item() == doctest::Approx(6.0));
}

TEST_CASE("linear form gradient") {
  Tensor xv = Tensor::vector({1.5, -2.0, 0.25});
  Var w = Var::parameter(Tensor::vector({0.1, 0.2, 0.3}));
  Var x = Var::constant(xv);
  backward(sum(mul(w, x)));
  CHECK(w.grad().values() == xv.values());
}

TEST_CASE("fan-out accumulates") {
  Var x = Var::parameter(Tensor::scalar(1.7));
  backward(add(x, x));
  CHECK(x.grad().item() == doctest::Approx(2.0));
}

TEST_CASE("non-scalar loss is rejected") {
  Var x = Var::parameter(Tensor::vector({1.0, 2.0}));
  CHECK_THROWS_AS(backward(tanh(x)), Error);
}

TEST_CASE("random five-node graph matches finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a0 = random_tensor({3, 4}, rng);
    const Tensor b0 = random_tensor({4, 2}, rng);
    auto f = [](std::vector<Var>& v) {
      Var h = matmul(v[0], v[1]);  // 1
      Var t = tanh(h);              // 2
      Var m = mul(t, h);            // 3
      Var r = relu(add(m, t));      // 4, 5
      return r;
    };
    CHECK(grad_check(f, {a0, b0}, 0, rng) <= 1e-6);
    CHECK(grad_check(f, {a0, b0}, 1, rng) <= 1e-6);
  }
}

TEST_CASE("every built-in op matches finite differences") {
  std::mt19937_64 rng(2024);
  using Fn = std::function<Var(std::vector<Var>&)>;
  struct Case {
    const char* name;
    Fn fn;
    std::vector<Shape> shapes;
    double tol;
    bool positive = false;
  };
  DropoutContext train_ctx{true, 99, 0};
  const std::vector<std::size_t> ids{2, 0, 2, 1};
  std::vector<Case> cases = {
      {"matmul", [](auto& v) { return matmul(v[0], v[1]); }, {{3, 4}, {4, 2}}, 1e-6},
      {"matmul_nt", [](auto& v) { return matmul_nt(v[0], v[1]); }, {{3, 4}, {5, 4}}, 1e-6},
      {"add", [](auto& v) { return add(v[0], v[1]); }, {{2, 3}, {2, 3}}, 1e-6},
      {"sub", [](auto& v) { return sub(v[0], v[1]); }, {{2, 3}, {2, 3}}, 1e-6},
      {"mul", [](auto& v) { return mul(v[0], v[1]); }, {{2, 3}, {2, 3}}, 1e-6},
      {"scale", [](auto& v) { return scale(v[0], -1.7); }, {{5}}, 1e-6},
      {"add_row", [](auto& v) { return add_row(v[0], v[1]); }, {{3, 4}, {4}}, 1e-6},
      {"tanh", [](auto& v) { return tanh(v[0]); }, {{6}}, 1e-6},
      {"relu", [](auto& v) { return relu(v[0]); }, {{6}}, 1e-6},
      {"exp", [](auto& v) { return exp(v[0]); }, {{6}}, 1e-4},
      {"log", [](auto& v) { return log(v[0]); }, {{6}}, 1e-4, true},
      {"log_floor", [](auto& v) { return log_floor(v[0], 1e-12); }, {{6}}, 1e-4, true},
      {"sum", [](auto& v) { return sum(v[0]); }, {{2, 3}}, 1e-6},
      {"mean", [](auto& v) { return mean(v[0]); }, {{2, 3}}, 1e-6},
      {"dot", [](auto& v) { return dot(v[0], v[1]); }, {{4}, {4}}, 1e-6},
      {"concat_rows", [](auto& v) { return concat_rows({v[0], v[1]}); }, {{2, 3}, {1, 3}}, 1e-6},
      {"concat_cols", [](auto& v) { return concat_cols({v[0], v[1]}); }, {{2, 3}, {2, 2}}, 1e-6},
      {"slice_rows", [](auto& v) { return slice_rows(v[0], 1, 3); }, {{4, 2}}, 1e-6},
      {"slice_cols", [](auto& v) { return slice_cols(v[0], 1, 3); }, {{2, 4}}, 1e-6},
      {"reshape", [](auto& v) { return reshape(v[0], {3, 2}); }, {{2, 3}}, 1e-6},
      {"select", [](auto& v) { return select(v[0], 4); }, {{2, 3}}, 1e-6},
      {"dropout", [&](auto& v) {
         DropoutContext ctx = train_ctx;  // same mask on every evaluation
         return dropout(v[0], 0.3, ctx);
       }, {{3, 3}}, 1e-6},
      {"embedding_lookup", [&](auto& v) { return embedding_lookup(v[0], ids); }, {{3, 2}}, 1e-6},
      {"softmax_rows", [](auto& v) { return softmax_rows(v[0]); }, {{2, 5}}, 1e-4},
      {"layer_norm_rows", [](auto& v) { return layer_norm_rows(v[0], v[1], v[2]); }, {{3, 4}, {4}, {4}}, 1e-6},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<Tensor> inputs;
      for (const auto& s : c.shapes) inputs.push_back(random_tensor(s, rng, c.positive ? 0.2 : -1.0, c.positive ? 2.0 : 1.0));
      if (std::string(c.name) == "relu") {
        for (auto& x : inputs[0].values()) if (std::abs(x) < 1e-3) x = 0.5;  // keep away from the kink
      }
      for (std::size_t which = 0; which < inputs.size(); ++which) worst = std::max(worst, grad_check(c.fn, inputs, which, rng));
    }
    CHECK(worst <= c.tol);
  }
}

TEST_CASE("shared subexpressions equal the unrolled tree") {
  std::mt19937_64 rng(5);
  const Tensor x0 = random_tensor({4}, rng);
  Var x1 = Var::parameter(x0);
  Var shared = tanh(x1);
  backward(sum(mul(shared, shared)));

  Var x2 = Var::parameter(x0);
  backward(sum(mul(tanh(x2), tanh(x2))));
  CHECK(oracle::linf(x1.grad().values(), x2.grad().values()) == 0.0);
}

TEST_CASE("zeroing grads leaves values untouched") {
  Var w = Var::parameter(Tensor::vector({1.0, -2.0}));
  backward(sum(mul(w, w)));
  const auto before = w.value().values();
  w.zero_grad();
  CHECK_FALSE(w.has_grad());
  CHECK(w.value().values() == before);
  CHECK(oracle::to_vec(w.grad().values()) == std::vector<double>{0.0, 0.0});
}

TEST_CASE("dropout is identity outside training and seeded inside") {
  Var x = Var::constant(Tensor({4, 4}, 1.0));
  DropoutContext eval_ctx;
  CHECK(dropout(x, 0.5, eval_ctx).value().values() == x.value().values());

  DropoutContext a{true, 7, 0}, b{true, 7, 0};
  CHECK(dropout(x, 0.5, a).value().values() == dropout(x, 0.5, b).value().values());
  CHECK_THROWS_AS(dropout(x, 1.0, a), Error);
}

TEST_CASE("embedding lookup rejects out-of-range ids") {
  Var table = Var::constant(Tensor({2, 3}, 0.0));
  const std::vector<std::size_t> ids{0, 2};
  CHECK_THROWS_AS(embedding_lookup(table, ids), Error);
}

TEST_CASE("custom ops participate in backward") {
  SUBCASE("identity passes the gradient through") {
    auto ident = register_custom(
        "identity", [](std::span<const Tensor> in) { return CustomForwardResult{in[0], {}}; },
        [](const std::any&, std::span<const Tensor>, const Tensor& g) { return std::vector<Tensor>{g}; });
    Var x = Var::parameter(Tensor::vector({1.0, 2.0, 3.0}));
    Var w = Var::constant(Tensor::vector({0.5, -1.0, 2.0}));
    backward(dot(ident({x}), w));
    CHECK(x.grad().values() == w.value().values());
  }
  SUBCASE("doubling matches finite differences") {
    auto twice = register_custom(
        "twice",
        [](std::span<const Tensor> in) {
          Tensor out = in[0];
          for (auto& v : out.values()) v *= 2.0;
          return CustomForwardResult{out, {}};
        },
        [](const std::any&, std::span<const Tensor>, const Tensor& g) {
          Tensor out = g;
          for (auto& v : out.values()) v *= 2.0;
          return std::vector<Tensor>{out};
        });
    std::mt19937_64 rng(3);
    auto f = [&](std::vector<Var>& v) { return tanh(twice({v[0]})); };
    CHECK(grad_check(f, {random_tensor({5}, rng)}, 0, rng) <= 1e-6);
  }
  SUBCASE("wrong-shape backward fails at backward time") {
    auto broken = register_custom(
        "broken", [](std::span<const Tensor> in) { return CustomForwardResult{in[0], {}}; },
        [](const std::any&, std::span<const Tensor>, const Tensor&) { return std::vector<Tensor>{Tensor({7})}; });
    Var x = Var::parameter(Tensor::vector({1.0, 2.0}));
    Var y = broken({x});  // forward is fine
    CHECK_THROWS_WITH_AS(backward(sum(y)), doctest::Contains("broken"), Error);
  }
}
