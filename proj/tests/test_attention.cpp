#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "resq/attention.hpp"
#include "resq/rng.hpp"
#include "resq/verify.hpp"

using namespace resq;

namespace {

Tensor<double> gaussian(Rng& rng, Shape shape, double std_dev = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = rng.next_gaussian() * std_dev;
  return t;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  REQUIRE(a.shape == b.shape);
  double worst = 0;
  for (size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  return worst;
}

/// Independent attention oracle: explicit loops, its own shifted softmax.
Tensor<double> naive_mha(const Tensor<double>& x, const AttentionWeights<double>& w,
                         QueryMode mode) {
  const size_t n = x.rows(), d = w.d_model, hn = w.n_head, dk = d / hn;
  const Tensor<double> q = query_project(x, w, mode);
  Tensor<double> k({n, d}), v({n, d});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) {
      double sk = 0, sv = 0;
      for (size_t p = 0; p < d; ++p) {
        sk += x.at(i, p) * w.w_k.at(p, j);
        sv += x.at(i, p) * w.w_v.at(p, j);
      }
      k.at(i, j) = sk;
      v.at(i, j) = sv;
    }
  Tensor<double> concat({n, d});
  for (size_t h = 0; h < hn; ++h) {
    for (size_t i = 0; i < n; ++i) {
      std::vector<double> row(i + 1);  // causal: keys 0..i only
      for (size_t j = 0; j <= i; ++j) {
        double dot = 0;
        for (size_t p = 0; p < dk; ++p) dot += q.at(i, h * dk + p) * k.at(j, h * dk + p);
        row[j] = dot / std::sqrt(double(dk));
      }
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0;
      for (double& r : row) z += (r = std::exp(r - mx));
      for (size_t j = 0; j <= i; ++j)
        for (size_t p = 0; p < dk; ++p) concat.at(i, h * dk + p) += row[j] / z * v.at(j, h * dk + p);
    }
  }
  Tensor<double> out({n, d});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) {
      double s = 0;
      for (size_t p = 0; p < d; ++p) s += concat.at(i, p) * w.w_o.at(p, j);
      out.at(i, j) = s;
    }
  return out;
}

}  // namespace

TEST_CASE("bottleneck parameter count formula") {
  REQUIRE(ftheta_param_count(768) == 768 * 768 + 2 * 768);
  REQUIRE(ftheta_param_count(4) == 24);
  REQUIRE_THROWS_AS(ftheta_param_count(7), std::invalid_argument);
}

TEST_CASE("causal mask truth table") {
  CausalMask m{5};
  REQUIRE(m.allowed(3, 3));
  REQUIRE(m.allowed(3, 0));
  REQUIRE_FALSE(m.allowed(3, 4));
  REQUIRE_FALSE(m.allowed(0, 1));
}

TEST_CASE("query projection per mode") {
  Rng rng(11);
  const size_t d = 8, n = 5;
  Tensor<double> x = gaussian(rng, {n, d});

  auto wl = random_attention_weights<double>(rng, d, 2, QueryMode::Linear);
  REQUIRE(query_project(x, wl, QueryMode::Linear).data == matmul(x, wl.w_q).data);

  auto wi = random_attention_weights<double>(rng, d, 2, QueryMode::Identity);
  REQUIRE(query_project(x, wi, QueryMode::Identity).data == x.data);

  auto wr = random_attention_weights<double>(rng, d, 2, QueryMode::ResidualGelu);
  SECTION("zero second stage collapses to half the input exactly") {
    wr.w2 = Tensor<double>({d / 2, d});  // zeros: f(X) vanishes identically
    const auto q = query_project(x, wr, QueryMode::ResidualGelu);
    for (size_t i = 0; i < q.numel(); ++i) REQUIRE(q.data[i] == x.data[i] * 0.5);
  }
  SECTION("nonzero bottleneck actually bends the query") {
    const auto q = query_project(x, wr, QueryMode::ResidualGelu);
    double dev = 0;
    for (size_t i = 0; i < q.numel(); ++i) dev = std::max(dev, std::abs(q.data[i] - 0.5 * x.data[i]));
    REQUIRE(dev > 1e-3);
  }
  REQUIRE_THROWS_AS(query_project(Tensor<double>({n, d + 1}), wr, QueryMode::ResidualGelu),
                    ShapeError);
}

TEST_CASE("zeroed bottleneck at the logits level halves identity-mode logits") {
  Rng rng(12);
  const size_t d = 8, n = 6;
  Tensor<double> x = gaussian(rng, {n, d});
  auto wr = random_attention_weights<double>(rng, d, 2, QueryMode::ResidualGelu);
  wr.w2 = Tensor<double>({d / 2, d});
  AttentionWeights<double> wi;
  wi.d_model = d;
  wi.n_head = 2;
  wi.w_k = wr.w_k;
  wi.w_v = wr.w_v;
  wi.w_o = wr.w_o;

  const auto lr = attention_logits(x, wr, QueryMode::ResidualGelu);
  const auto li = attention_logits(x, wi, QueryMode::Identity);
  REQUIRE(lr.size() == li.size());
  for (size_t h = 0; h < lr.size(); ++h)
    for (size_t i = 0; i < lr[h].numel(); ++i)
      REQUIRE(lr[h].data[i] == Catch::Approx(0.5 * li[h].data[i]).margin(1e-12));
}

TEST_CASE("query projection treats each token row independently") {
  Rng rng(13);
  const size_t d = 10, n = 7;
  Tensor<double> x = gaussian(rng, {n, d});
  auto w = random_attention_weights<double>(rng, d, 2, QueryMode::ResidualGelu);
  const auto q = query_project(x, w, QueryMode::ResidualGelu);

  // reverse the rows of x: the projected rows reverse bitwise
  Tensor<double> rx({n, d});
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) rx.at(i, j) = x.at(n - 1 - i, j);
  const auto rq = query_project(rx, w, QueryMode::ResidualGelu);
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < d; ++j) REQUIRE(rq.at(i, j) == q.at(n - 1 - i, j));
}

TEST_CASE("multi-head attention matches an independent oracle") {
  Rng rng(14);
  const size_t d = 8, n = 4;
  Tensor<double> x = gaussian(rng, {n, d});
  for (QueryMode mode : {QueryMode::Linear, QueryMode::Identity, QueryMode::ResidualGelu}) {
    auto w = random_attention_weights<double>(rng, d, 2, mode);
    const auto got = mha_forward(x, w, CausalMask{n}, mode);
    const auto want = naive_mha(x, w, mode);
    REQUIRE(max_abs_diff(got, want) < 1e-10);
  }
}

TEST_CASE("identity basis change is a bitwise no-op") {
  Rng rng(15);
  const size_t d = 8, n = 4;
  Tensor<double> x = gaussian(rng, {n, d});
  auto w = random_attention_weights<double>(rng, d, 2, QueryMode::Linear);
  const auto out = reparametrize(x, w, Tensor<double>::identity(d), QueryMode::Linear);
  REQUIRE(out.x.data == x.data);
  REQUIRE(out.w.w_q.data == w.w_q.data);
  REQUIRE(out.w.w_k.data == w.w_k.data);
  REQUIRE(out.w.w_v.data == w.w_v.data);
}

TEST_CASE("doubling basis change halves the projections and preserves outputs") {
  Rng rng(16);
  const size_t d = 8, n = 4;
  Tensor<double> x = gaussian(rng, {n, d});
  auto w = random_attention_weights<double>(rng, d, 2, QueryMode::Linear);
  Tensor<double> theta = Tensor<double>::identity(d);
  for (auto& v : theta.data) v *= 2.0;
  const auto out = reparametrize(x, w, theta, QueryMode::Linear);
  for (size_t i = 0; i < x.numel(); ++i) REQUIRE(out.x.data[i] == 2.0 * x.data[i]);
  for (size_t i = 0; i < w.w_q.numel(); ++i) REQUIRE(out.w.w_q.data[i] == 0.5 * w.w_q.data[i]);
  const auto before = mha_forward(x, w, CausalMask{n}, QueryMode::Linear);
  const auto after = mha_forward(out.x, out.w, CausalMask{n}, QueryMode::Linear);
  REQUIRE(max_abs_diff(before, after) < 1e-10);
}

TEST_CASE("random basis changes preserve linear attention output") {
  const auto rep = reparametrization_suite(2024, 20, 16, 4, 8);
  REQUIRE(rep.trials == 20);
  REQUIRE(rep.max_deviation <= 1e-8);
}

TEST_CASE("basis change rejects singular theta") {
  Rng rng(17);
  const size_t d = 4;
  Tensor<double> x = gaussian(rng, {3, d});
  auto w = random_attention_weights<double>(rng, d, 2, QueryMode::Linear);
  REQUIRE_THROWS_AS(transform_basis(x, w, Tensor<double>({d, d})), NumericalError);
  Tensor<double> ones = Tensor<double>::full({d, d}, 1.0);
  REQUIRE_THROWS_AS(transform_basis(x, w, ones), NumericalError);
}

TEST_CASE("invariance map refuses nonlinear modes but raw basis change runs") {
  Rng rng(18);
  const size_t d = 8;
  Tensor<double> x = gaussian(rng, {4, d});
  auto w = random_attention_weights<double>(rng, d, 2, QueryMode::ResidualGelu);
  Tensor<double> theta = Tensor<double>::identity(d);
  REQUIRE_THROWS_AS(reparametrize(x, w, theta, QueryMode::ResidualGelu), std::invalid_argument);
  REQUIRE_THROWS_AS(reparametrize(x, w, theta, QueryMode::Identity), std::invalid_argument);
  REQUIRE_NOTHROW(transform_basis(x, w, theta));
}

TEST_CASE("nonlinear queries escape the basis-change symmetry") {
  const auto rep = escape_suite(99, 20, 16, 4, 8);
  REQUIRE(rep.trials == 20);
  REQUIRE(rep.count_above(1e-3) >= 19);  // deviation > 1e-3 nearly always
}

TEST_CASE("query absorption sets w_q to the exact identity") {
  Rng rng(19);
  const size_t d = 8, n = 4;
  Tensor<double> x = gaussian(rng, {n, d});
  auto w = random_attention_weights<double>(rng, d, 2, QueryMode::Linear);
  const auto out = absorb_query(x, w);
  const auto eye = Tensor<double>::identity(d);
  REQUIRE(out.w.w_q.data == eye.data);  // bitwise, not approximately
  const auto before = mha_forward(x, w, CausalMask{n}, QueryMode::Linear);
  const auto after = mha_forward(out.x, out.w, CausalMask{n}, QueryMode::Linear);
  REQUIRE(max_abs_diff(before, after) <= 1e-8);

  SECTION("absorbing an identity w_q changes nothing") {
    w.w_q = eye;
    const auto noop = absorb_query(x, w);
    REQUIRE(noop.x.data == x.data);
    REQUIRE(noop.w.w_q.data == eye.data);
    REQUIRE(noop.w.w_k.data == w.w_k.data);
  }
  SECTION("missing or singular w_q is rejected") {
    auto wi = random_attention_weights<double>(rng, d, 2, QueryMode::Identity);
    REQUIRE_THROWS_AS(absorb_query(x, wi), std::invalid_argument);
    w.w_q = Tensor<double>({d, d});
    REQUIRE_THROWS_AS(absorb_query(x, w), NumericalError);
  }
}

TEST_CASE("logit symmetry: tied projections symmetric, generic ones not") {
  Rng rng(20);
  const size_t d = 16, n = 8;
  Tensor<double> x = gaussian(rng, {n, d});
  auto w = random_attention_weights<double>(rng, d, 4, QueryMode::Linear);

  const auto generic = logits_symmetry_check(x, w);
  REQUIRE_FALSE(generic.is_symmetric);
  REQUIRE(generic.max_asymmetry > 1e-3);

  w.w_q = w.w_k;  // Q K^T becomes X W (X W)^T restricted per head: symmetric
  const auto tied = logits_symmetry_check(x, w);
  REQUIRE(tied.is_symmetric);
  REQUIRE(tied.max_asymmetry <= 1e-10);
}

TEST_CASE("linear solve inverts well-conditioned systems") {
  Rng rng(21);
  const size_t d = 12;
  Tensor<double> a = Tensor<double>::identity(d);
  Tensor<double> g = gaussian(rng, {d, d}, 0.3);
  for (size_t i = 0; i < a.numel(); ++i) a.data[i] += g.data[i];
  Tensor<double> b = gaussian(rng, {d, 5});
  const auto xsol = solve(a, b);
  REQUIRE(max_abs_diff(matmul(a, xsol), b) < 1e-10);

  REQUIRE(inversion_residual(Tensor<double>::identity(d)) == 0.0);
  REQUIRE(inversion_residual(a) < 1e-10);
  REQUIRE_THROWS_AS(solve(Tensor<double>({d, d}), b), NumericalError);
  REQUIRE_THROWS_AS(solve(Tensor<double>({d, d + 1}), b), ShapeError);
}

TEST_CASE("weight validation catches shape mistakes") {
  Rng rng(22);
  auto w = random_attention_weights<double>(rng, 8, 2, QueryMode::Linear);
  REQUIRE_NOTHROW(w.validate(QueryMode::Linear));
  w.n_head = 3;
  REQUIRE_THROWS_AS(w.validate(QueryMode::Linear), ShapeError);
  w.n_head = 2;
  w.w_k = Tensor<double>({8, 7});
  REQUIRE_THROWS_AS(w.validate(QueryMode::Linear), ShapeError);

  auto wr = random_attention_weights<double>(rng, 8, 2, QueryMode::ResidualGelu);
  wr.rms_gain = Tensor<double>({4});
  REQUIRE_THROWS_AS(wr.validate(QueryMode::ResidualGelu), ShapeError);

  // sequence longer than the mask is rejected
  auto wl = random_attention_weights<double>(rng, 8, 2, QueryMode::Linear);
  Tensor<double> x = gaussian(rng, {4, 8});
  REQUIRE_THROWS_AS(mha_forward(x, wl, CausalMask{3}, QueryMode::Linear), ShapeError);
}
