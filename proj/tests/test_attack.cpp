#include <doctest.h>

#include <cmath>

#include "pmsfl/attack.hpp"
#include "pmsfl/error.hpp"
#include "pmsfl/linalg.hpp"

using namespace pmsfl;

namespace {

net::DenseStack linear_stack(const std::vector<std::size_t>& dims, Rng& rng) {
  net::DenseStack stack;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    stack.layers.push_back(net::kaiming_init(dims[i + 1], dims[i], rng));
    stack.relu_after.push_back(0);
  }
  return stack;
}

double l2(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("analytic_inversion basics") {
  net::WeightMatrix eye(2, 2);
  eye.at(0, 0) = 1.0;
  eye.at(1, 1) = 1.0;
  mask::BinaryMask ones;
  ones.layers = {{1, 1, 1, 1}};
  const std::vector<double> x{0.4, -1.9};
  auto y = net::dense_forward(eye, x);
  auto back = attack::analytic_inversion(y.values, eye, ones);
  CHECK(back[0] == doctest::Approx(x[0]).epsilon(1e-12));
  CHECK(back[1] == doctest::Approx(x[1]).epsilon(1e-12));

  net::WeightMatrix w(2, 2);
  w.at(0, 0) = 2.0;
  w.at(1, 1) = 4.0;
  back = attack::analytic_inversion(std::vector<double>{2.0, 4.0}, w, ones);
  CHECK(back[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(back[1] == doctest::Approx(1.0).epsilon(1e-12));

  mask::BinaryMask row_zero;
  row_zero.layers = {{0, 0, 1, 1}};
  CHECK_THROWS_AS(
      attack::analytic_inversion(std::vector<double>{1.0, 1.0}, w, row_zero),
      Error);
}

TEST_CASE("analytic_inversion composed with the forward map is identity") {
  Rng rng(61);
  for (int trial = 0; trial < 30; ++trial) {
    auto w = net::kaiming_init(4, 4, rng);
    mask::ProbMask theta;
    theta.layers = {std::vector<double>(16, 0.8)};
    const auto m = mask::sample_mask(theta, rng);
    net::DenseStack stack;
    stack.layers = {w};
    stack.relu_after = {0};
    std::vector<double> x(4);
    for (double& v : x) v = rng.normal();
    const auto y = mask::masked_forward(stack, m, x);
    try {
      const auto back = attack::analytic_inversion(y.values, w, m);
      const double x_norm = std::max(1.0, l2(x, std::vector<double>(4, 0.0)));
      CHECK(l2(back, x) / x_norm <= 1e-9);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kSingular);
    }
  }
}

TEST_CASE("dlg_attack returns the initialization when it is already exact") {
  Rng rng(7);
  auto stack = linear_stack({4, 4}, rng);
  std::vector<double> x(4);
  for (double& v : x) v = rng.normal();
  const auto observed = net::stack_forward(stack, x);

  attack::VictimView view;
  view.stack = &stack;
  auto report = attack::dlg_attack(observed, view, attack::MaskKnowledge::kNone,
                                   1000, 0.05, rng, x, x);
  CHECK(report.converged);
  CHECK(report.iterations_used == 0);
  CHECK(report.error <= 1e-12);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(report.reconstructed[i] == x[i]);
}

TEST_CASE("dlg_attack with zero budget reports no convergence") {
  Rng rng(8);
  auto stack = linear_stack({3, 3}, rng);
  std::vector<double> x{1.0, -1.0, 0.5};
  const auto observed = net::stack_forward(stack, x);
  attack::VictimView view;
  view.stack = &stack;
  const auto report = attack::dlg_attack(
      observed, view, attack::MaskKnowledge::kNone, 0, 0.05, rng, x);
  CHECK_FALSE(report.converged);
  CHECK(report.iterations_used == 0);
  CHECK(report.reconstructed.size() == 3);
}

TEST_CASE("dlg_attack solves the convex exact-knowledge case") {
  Rng rng(9);
  for (int trial = 0; trial < 5; ++trial) {
    auto stack = linear_stack({6, 6}, rng);
    mask::ProbMask theta;
    theta.layers = {std::vector<double>(36, 0.7)};
    mask::BinaryMask m;
    double cond = 0.0;
    // Keep sampling until the masked matrix is well conditioned; plain
    // gradient descent needs roughly cond^2 iterations per decade.
    do {
      m = mask::sample_mask(theta, rng);
      net::WeightMatrix wm = stack.layers[0];
      for (std::size_t k = 0; k < 36; ++k) wm.values[k] *= m.layers[0][k];
      linalg::Mat mat(6, 6);
      mat.a = wm.values;
      cond = linalg::condition(mat);
    } while (!(cond < 8.0));

    std::vector<double> x(6);
    for (double& v : x) v = rng.normal();
    const auto observed = mask::masked_forward(stack, m, x);

    attack::VictimView view;
    view.stack = &stack;
    view.exact_mask = &m;
    const auto report =
        attack::dlg_attack(observed.values, view, attack::MaskKnowledge::kExact,
                           10000, 0.05, rng, x);
    CHECK(report.error < 1e-6);
  }
}

TEST_CASE("dlg_attack objective trace never increases") {
  Rng rng(10);
  auto stack = linear_stack({5, 8, 5}, rng);
  std::vector<double> x(5);
  for (double& v : x) v = rng.normal();
  const auto observed = net::stack_forward(stack, x);
  attack::VictimView view;
  view.stack = &stack;
  const auto report = attack::dlg_attack(
      observed, view, attack::MaskKnowledge::kNone, 500, 0.1, rng, x);
  for (std::size_t i = 1; i < report.objective_trace.size(); ++i)
    CHECK(report.objective_trace[i] <= report.objective_trace[i - 1]);
}

TEST_CASE("mask ignorance hurts the attacker") {
  Rng rng(11);
  auto stack = linear_stack({6, 6}, rng);
  mask::ProbMask theta;
  theta.layers = {std::vector<double>(36, 0.5)};

  double exact_total = 0.0, blind_total = 0.0;
  std::size_t counted = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = mask::sample_mask(theta, rng);
    std::vector<double> x(6);
    for (double& v : x) v = rng.normal();
    const auto observed = mask::masked_forward(stack, m, x);

    attack::VictimView view;
    view.stack = &stack;
    view.exact_mask = &m;
    view.theta = &theta;
    Rng atk1 = Rng::derive(1000, trial, 0);
    const auto exact =
        attack::dlg_attack(observed.values, view, attack::MaskKnowledge::kExact,
                           2000, 0.05, atk1, x);
    Rng atk2 = Rng::derive(1000, trial, 1);
    const auto blind =
        attack::dlg_attack(observed.values, view, attack::MaskKnowledge::kNone,
                           2000, 0.05, atk2, x);
    exact_total += exact.error;
    blind_total += blind.error;
    ++counted;
  }
  CHECK(counted == 100);
  CHECK(blind_total / counted > exact_total / counted);
}

TEST_CASE("empirical_reconstruction_error degenerate cases") {
  net::WeightMatrix w(2, 2);
  w.at(0, 0) = 3.0;
  w.at(0, 1) = 1.0;
  w.at(1, 0) = -1.0;
  w.at(1, 1) = 2.0;
  Rng rng(12);

  mask::ProbMask sure;
  sure.layers = {{1.0, 1.0, 1.0, 1.0}};
  auto report = attack::empirical_reconstruction_error(
      w, sure, std::vector<double>{1.0, -1.0}, 200, rng);
  CHECK(report.mean_error <= 1e-12);
  CHECK(report.inverted == 200);

  mask::ProbMask half;
  half.layers = {{0.5, 0.5, 0.5, 0.5}};
  report = attack::empirical_reconstruction_error(
      w, half, std::vector<double>{0.0, 0.0}, 200, rng);
  CHECK(report.mean_error == 0.0);
}

TEST_CASE("cascade recovers a single-layer input") {
  Rng rng(13);
  auto stack = linear_stack({4, 4}, rng);
  const auto shapes = mask::shapes_of(stack);
  mask::ScoreMask scores;
  scores.layers = {std::vector<double>(16)};
  for (double& v : scores.layers[0]) v = rng.uniform(-2.0, 2.0);
  const auto theta = mask::probs_from_scores(scores);
  mask::BinaryMask m;
  do {
    m = mask::sample_mask(theta, rng);
    linalg::Mat mat(4, 4);
    for (std::size_t k = 0; k < 16; ++k)
      mat.a[k] = stack.layers[0].values[k] * m.layers[0][k];
    if (linalg::condition(mat) < 1e6) break;
  } while (true);

  std::vector<double> x(4), g(4);
  for (double& v : x) v = rng.normal();
  for (double& v : g) v = rng.normal();

  mask::ForwardCache cache;
  const auto out = mask::masked_forward(stack, m, x, &cache);
  const auto grads = mask::ste_backward(cache, stack, scores, g);

  const auto result = attack::score_gradient_cascade(
      grads.score_grads, {out.values}, stack, m, scores, g);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(std::abs(result.input[i] - x[i]) <= 1e-9);
}

TEST_CASE("cascade recovers the input of a two-layer linear stack") {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    auto stack = linear_stack({3, 3, 3}, rng);
    const auto shapes = mask::shapes_of(stack);
    mask::ScoreMask scores;
    for (const auto& sh : shapes) {
      scores.layers.emplace_back(sh.rows * sh.cols);
      for (double& v : scores.layers.back()) v = rng.uniform(-1.5, 1.5);
    }
    const auto theta = mask::probs_from_scores(scores);
    mask::BinaryMask m;
    bool ok = false;
    for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
      m = mask::sample_mask(theta, rng);
      ok = true;
      for (std::size_t li = 0; li < 2 && ok; ++li) {
        linalg::Mat mat(3, 3);
        for (std::size_t k = 0; k < 9; ++k)
          mat.a[k] = stack.layers[li].values[k] * m.layers[li][k];
        ok = linalg::condition(mat) < 1e4;
      }
    }
    if (!ok) continue;

    std::vector<double> x(3), g(3);
    for (double& v : x) v = rng.normal();
    for (double& v : g) v = rng.normal();

    mask::ForwardCache cache;
    mask::masked_forward(stack, m, x, &cache);
    const auto grads = mask::ste_backward(cache, stack, scores, g);

    std::vector<std::vector<double>> outputs{cache.pre_act[0],
                                             cache.pre_act[1]};
    const auto result = attack::score_gradient_cascade(
        grads.score_grads, outputs, stack, m, scores, g);
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(std::abs(result.input[i] - x[i]) <= 1e-8);
    // Layer-2 input equals the first layer's output.
    for (std::size_t i = 0; i < 3; ++i)
      CHECK(std::abs(result.layer_inputs[1][i] - cache.pre_act[0][i]) <= 1e-8);
  }
}

TEST_CASE("cascade rejects a layer with an all-zero mask row") {
  Rng rng(15);
  auto stack = linear_stack({3, 3}, rng);
  mask::ScoreMask scores;
  scores.layers = {std::vector<double>(9, 0.0)};
  mask::BinaryMask m;
  m.layers = {{0, 0, 0, 1, 1, 1, 1, 1, 1}};  // first row fully masked out
  std::vector<std::vector<double>> grads{std::vector<double>(9, 0.1)};
  std::vector<std::vector<double>> outputs{std::vector<double>(3, 0.0)};
  CHECK_THROWS_AS(
      attack::score_gradient_cascade(grads, outputs, stack, m, scores,
                                     std::vector<double>{1.0, 1.0, 1.0}),
      Error);
}

TEST_CASE("cascade refuses ReLU stacks") {
  Rng rng(16);
  net::DenseStack stack;
  stack.layers.push_back(net::kaiming_init(3, 3, rng));
  stack.relu_after = {1};
  mask::ScoreMask scores;
  scores.layers = {std::vector<double>(9, 0.0)};
  mask::BinaryMask m;
  m.layers = {std::vector<std::uint8_t>(9, 1)};
  std::vector<std::vector<double>> grads{std::vector<double>(9, 0.1)};
  std::vector<std::vector<double>> outputs{std::vector<double>(3, 0.0)};
  CHECK_THROWS_AS(
      attack::score_gradient_cascade(grads, outputs, stack, m, scores,
                                     std::vector<double>{1.0, 1.0, 1.0}),
      Error);
}
