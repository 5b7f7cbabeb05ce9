// Walkthrough of the algebraic story: a linear query projection is
// redundant (any invertible basis change, and in particular Theta = W_Q,
// leaves the attention output unchanged), while the nonlinear residual
// query escapes that equivalence class.

#include <cstdio>

#include "resq/resq.hpp"

using namespace resq;

namespace {

double deviation(const Tensor<double>& a, const Tensor<double>& b) {
  double worst = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    worst = std::max(worst, std::abs(a.data[i] - b.data[i]));
  }
  return worst;
}

}  // namespace

int main() {
  const size_t d = 16, h = 4, n = 8;
  Rng rng(123);
  const CausalMask mask{n};

  Tensor<double> x({n, d});
  for (auto& v : x.data) v = rng.next_gaussian();

  std::printf("-- linear queries: the projection is pure notation --\n");
  auto w = random_attention_weights<double>(rng, d, h, QueryMode::Linear);
  const auto y = mha_forward(x, w, mask, QueryMode::Linear);

  Tensor<double> theta({d, d});
  for (auto& v : theta.data) v = rng.next_gaussian() * 0.3;
  for (size_t i = 0; i < d; ++i) theta.at(i, i) += 1.0;

  const auto moved = reparametrize(x, w, theta, QueryMode::Linear);
  const auto y_moved = mha_forward(moved.x, moved.w, mask, QueryMode::Linear);
  std::printf("random basis change:  max |delta output| = %.3e\n", deviation(y, y_moved));

  const auto absorbed = absorb_query(x, w);
  const auto y_abs = mha_forward(absorbed.x, absorbed.w, mask, QueryMode::Linear);
  bool exact_identity = absorbed.w.w_q.data == Tensor<double>::identity(d).data;
  std::printf("theta = W_Q:          max |delta output| = %.3e, W_Q is %s\n",
              deviation(y, y_abs), exact_identity ? "exactly the identity" : "NOT identity");

  std::printf("\n-- nonlinear residual query: the class is escaped --\n");
  auto wr = random_attention_weights<double>(rng, d, h, QueryMode::ResidualGelu);
  const auto yr = mha_forward(x, wr, mask, QueryMode::ResidualGelu);
  const auto moved_r = transform_basis(x, wr, theta);
  const auto yr_moved = mha_forward(moved_r.x, moved_r.w, mask, QueryMode::ResidualGelu);
  std::printf("same basis change:    max |delta output| = %.3e  (no longer ~0)\n",
              deviation(yr, yr_moved));
  return 0;
}
