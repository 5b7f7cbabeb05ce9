#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "resq/optim.hpp"

using namespace resq;

namespace {

Parameter<double> scalar_param(double value, bool decay) {
  Parameter<double> p("w", Tensor<double>({1}, {value}), decay);
  return p;
}

/// Independent scalar AdamW reference, written directly from the update rule.
struct ScalarRef {
  double m = 0, v = 0;
  int64_t t = 0;
  double beta1 = 0.9, beta2 = 0.95, eps = 1e-8;

  double step(double theta, double g, double lr, double wd, bool decay) {
    ++t;
    m = beta1 * m + (1 - beta1) * g;
    v = beta2 * v + (1 - beta2) * g * g;
    const double mhat = m / (1 - std::pow(beta1, t));
    const double vhat = v / (1 - std::pow(beta2, t));
    const double decay_mult = decay ? 1 - lr * wd : 1;
    return theta * decay_mult - lr * mhat / (std::sqrt(vhat) + eps);
  }
};

}  // namespace

TEST_CASE("adamw matches a hand-written scalar reference over many steps") {
  auto p = scalar_param(0.5, true);
  std::vector<Parameter<double>*> params{&p};
  AdamWState<double> state;
  state.bind(params);
  ScalarRef ref;
  double theta = 0.5;

  // deterministic pseudo-gradients, none large enough to clip at 1e9
  for (int s = 1; s <= 25; ++s) {
    const double g = std::sin(0.7 * s) + 0.1;
    p.tensor.grad.assign(1, g);
    const auto res = adamw_step<double>(params, state, 1e-2, 0.1, 1e9);
    theta = ref.step(theta, g, 1e-2, 0.1, true);
    REQUIRE(res.diverged == false);
    REQUIRE(res.grad_norm == Catch::Approx(std::abs(g)).margin(1e-15));
    REQUIRE(p.tensor.data[0] == Catch::Approx(theta).margin(1e-15));
  }
}

TEST_CASE("weight decay zero reduces adamw to plain adam") {
  auto p = scalar_param(1.0, true);
  auto q = scalar_param(1.0, true);
  std::vector<Parameter<double>*> pp{&p}, qq{&q};
  AdamWState<double> sp, sq;
  sp.bind(pp);
  sq.bind(qq);

  ScalarRef adam;
  double theta = 1.0;
  for (int s = 1; s <= 10; ++s) {
    const double g = 0.3 * s - 1.0;
    p.tensor.grad.assign(1, g);
    q.tensor.grad.assign(1, g);
    adamw_step<double>(pp, sp, 3e-3, 0.0, 0.0);      // wd = 0
    adamw_step<double>(qq, sq, 3e-3, 0.25, 0.0);     // wd > 0 shrinks extra
    theta = adam.step(theta, g, 3e-3, 0.0, false);   // reference without decay term
    REQUIRE(p.tensor.data[0] == Catch::Approx(theta).margin(1e-15));
  }
  REQUIRE(q.tensor.data[0] < p.tensor.data[0]);
}

TEST_CASE("first step moves by roughly lr in the gradient direction") {
  // with zero moments, mhat = g and vhat = g*g, so the update is
  // -lr * g / (|g| + eps) ~= -lr * sign(g)
  auto p = scalar_param(0.0, false);
  std::vector<Parameter<double>*> params{&p};
  AdamWState<double> state;
  state.bind(params);
  p.tensor.grad.assign(1, -4.2);
  adamw_step<double>(params, state, 1e-3, 0.0, 0.0);
  REQUIRE(p.tensor.data[0] == Catch::Approx(1e-3).epsilon(1e-6));
}

TEST_CASE("global clipping rescales gradients before the update") {
  // two params, grads (3, 4) -> norm 5; clip 1 means every grad shrinks 5x.
  auto a = scalar_param(0.0, false);
  auto b = scalar_param(0.0, false);
  std::vector<Parameter<double>*> params{&a, &b};
  AdamWState<double> state;
  state.bind(params);
  a.tensor.grad.assign(1, 3.0);
  b.tensor.grad.assign(1, 4.0);
  const auto res = adamw_step<double>(params, state, 1e-2, 0.0, 1.0);
  REQUIRE(res.grad_norm == Catch::Approx(5.0).margin(1e-12));

  // reference sees the pre-scaled gradient
  ScalarRef ref;
  REQUIRE(a.tensor.data[0] == Catch::Approx(ref.step(0.0, 3.0 / 5.0, 1e-2, 0.0, false)).margin(1e-15));
  ScalarRef ref2;
  REQUIRE(b.tensor.data[0] == Catch::Approx(ref2.step(0.0, 4.0 / 5.0, 1e-2, 0.0, false)).margin(1e-15));

  // norm below the threshold: no rescaling
  AdamWState<double> s2;
  auto c = scalar_param(0.0, false);
  std::vector<Parameter<double>*> pc{&c};
  s2.bind(pc);
  c.tensor.grad.assign(1, 0.5);
  adamw_step<double>(pc, s2, 1e-2, 0.0, 1.0);
  ScalarRef ref3;
  REQUIRE(c.tensor.data[0] == Catch::Approx(ref3.step(0.0, 0.5, 1e-2, 0.0, false)).margin(1e-15));
}

TEST_CASE("decay applies only to flagged parameters") {
  auto decayed = scalar_param(2.0, true);
  auto exempt = scalar_param(2.0, false);
  std::vector<Parameter<double>*> params{&decayed, &exempt};
  AdamWState<double> state;
  state.bind(params);
  decayed.tensor.grad.assign(1, 0.0);
  exempt.tensor.grad.assign(1, 0.0);
  adamw_step<double>(params, state, 1e-2, 0.5, 1.0);
  // zero gradient: the only movement is the decay multiplier
  REQUIRE(decayed.tensor.data[0] == Catch::Approx(2.0 * (1 - 1e-2 * 0.5)).margin(1e-15));
  REQUIRE(exempt.tensor.data[0] == 2.0);
}

TEST_CASE("non-finite gradients flag divergence and freeze everything") {
  auto p = scalar_param(1.25, true);
  std::vector<Parameter<double>*> params{&p};
  AdamWState<double> state;
  state.bind(params);

  for (double bad : {std::numeric_limits<double>::quiet_NaN(),
                     std::numeric_limits<double>::infinity()}) {
    p.tensor.grad.assign(1, bad);
    const auto res = adamw_step<double>(params, state, 1e-2, 0.1, 1.0);
    REQUIRE(res.diverged);
    REQUIRE(p.tensor.data[0] == 1.25);       // untouched
    REQUIRE(state.step == 0);                // state untouched
    REQUIRE(state.slots[0].m[0] == 0.0);
  }
}

TEST_CASE("adamw rejects unbound state and missing gradients") {
  auto p = scalar_param(0.0, false);
  std::vector<Parameter<double>*> params{&p};
  AdamWState<double> state;  // never bound
  p.tensor.grad.assign(1, 1.0);
  REQUIRE_THROWS_AS(adamw_step<double>(params, state, 1e-3, 0.0, 0.0), std::invalid_argument);

  AdamWState<double> bound;
  bound.bind(params);
  p.tensor.grad.clear();
  REQUIRE_THROWS_AS(adamw_step<double>(params, bound, 1e-3, 0.0, 0.0), std::invalid_argument);
}

TEST_CASE("zero_grads allocates and clears") {
  auto p = scalar_param(1.0, false);
  std::vector<Parameter<double>*> params{&p};
  p.tensor.grad.assign(1, 7.0);
  zero_grads<double>(params);
  REQUIRE(p.tensor.grad == std::vector<double>{0.0});
}
