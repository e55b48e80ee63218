#include <doctest.h>

#include <cmath>

#include "pmsfl/error.hpp"
#include "pmsfl/mask.hpp"

using namespace pmsfl;

namespace {

net::DenseStack two_layer_stack() {
  net::DenseStack stack;
  net::WeightMatrix w0(2, 2);
  w0.at(0, 0) = 1.0;
  w0.at(0, 1) = 2.0;
  w0.at(1, 0) = -1.0;
  w0.at(1, 1) = 0.5;
  net::WeightMatrix w1(2, 2);
  w1.at(0, 0) = 3.0;
  w1.at(0, 1) = -2.0;
  w1.at(1, 0) = 0.5;
  w1.at(1, 1) = 1.0;
  stack.layers = {w0, w1};
  stack.relu_after = {0, 0};
  return stack;
}

net::DenseStack random_linear_stack(const std::vector<std::size_t>& dims,
                                    Rng& rng) {
  net::DenseStack stack;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    stack.layers.push_back(net::kaiming_init(dims[i + 1], dims[i], rng));
    stack.relu_after.push_back(0);
  }
  return stack;
}

}  // namespace

TEST_CASE("sample_mask respects degenerate probabilities") {
  mask::Shapes shapes{{2, 3}};
  Rng rng(4);
  auto ones = mask::sample_mask(mask::ProbMask::constant(shapes, 1.0), rng);
  for (auto b : ones.layers[0]) CHECK(b == 1);
  auto zeros = mask::sample_mask(mask::ProbMask::constant(shapes, 0.0), rng);
  for (auto b : zeros.layers[0]) CHECK(b == 0);
}

TEST_CASE("sample_mask empirical mean at theta = 0.5") {
  mask::Shapes shapes{{1, 8}};
  const auto theta = mask::ProbMask::constant(shapes, 0.5);
  Rng rng(123);
  const std::size_t draws = 100000;
  std::vector<double> mean(8, 0.0);
  for (std::size_t t = 0; t < draws; ++t) {
    const auto m = mask::sample_mask(theta, rng);
    for (std::size_t k = 0; k < 8; ++k) mean[k] += m.layers[0][k];
  }
  for (double& v : mean) v /= static_cast<double>(draws);
  for (double v : mean) {
    CHECK(v >= 0.49);
    CHECK(v <= 0.51);
  }
}

TEST_CASE("sample_mask is reproducible and seeds decorrelate") {
  mask::Shapes shapes{{8, 8}};
  const auto theta = mask::ProbMask::constant(shapes, 0.5);
  Rng a(9), b(9), c(10);
  const auto m1 = mask::sample_mask(theta, a);
  const auto m2 = mask::sample_mask(theta, b);
  const auto m3 = mask::sample_mask(theta, c);
  CHECK(m1.layers == m2.layers);
  CHECK(m1.layers != m3.layers);
}

TEST_CASE("masked_forward with the all-ones mask equals dense composition") {
  const auto stack = two_layer_stack();
  const auto shapes = mask::shapes_of(stack);
  const std::vector<double> x{0.3, -0.7};
  const auto ones =
      mask::map_mask(mask::ProbMask::constant(shapes, 1.0));
  const auto masked = mask::masked_forward(stack, ones, x);
  auto h = net::dense_forward(stack.layers[0], x);
  auto ref = net::dense_forward(stack.layers[1], h.values);
  for (std::size_t i = 0; i < ref.values.size(); ++i)
    CHECK(masked.values[i] == doctest::Approx(ref.values[i]).epsilon(1e-15));
}

TEST_CASE("masked_forward with the all-zeros mask is zero") {
  const auto stack = two_layer_stack();
  const auto zeros =
      mask::map_mask(mask::ProbMask::constant(mask::shapes_of(stack), 0.0));
  const auto out = mask::masked_forward(stack, zeros, std::vector<double>{1.0, 1.0});
  for (double v : out.values) CHECK(v == 0.0);
}

TEST_CASE("masked_forward matches a hand-computed two-layer case") {
  const auto stack = two_layer_stack();
  mask::BinaryMask m;
  m.layers = {{1, 0, 1, 1}, {1, 1, 0, 1}};
  // Layer 0: [[1,0],[-1,0.5]], x = [2,4] -> [2, 0].
  // Layer 1: [[3,-2],[0,1]], [2,0] -> [6, 0].
  const auto out = mask::masked_forward(stack, m, std::vector<double>{2.0, 4.0});
  CHECK(out.values[0] == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(out.values[1] == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("masked_forward equals dense forward on premultiplied weights") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    net::DenseStack stack;
    stack.layers.push_back(net::kaiming_init(3, 4, rng));
    stack.layers.push_back(net::kaiming_init(2, 3, rng));
    stack.relu_after = {1, 0};
    const auto shapes = mask::shapes_of(stack);
    const auto theta = mask::ProbMask::constant(shapes, 0.5);
    const auto m = mask::sample_mask(theta, rng);

    net::DenseStack pre = stack;
    for (std::size_t li = 0; li < pre.layers.size(); ++li) {
      pre.layers[li].frozen = false;
      for (std::size_t k = 0; k < pre.layers[li].values.size(); ++k)
        pre.layers[li].values[k] *= m.layers[li][k];
    }
    std::vector<double> x(4);
    for (double& v : x) v = rng.normal();
    const auto masked = mask::masked_forward(stack, m, x);
    const auto ref = net::stack_forward(pre, x);
    for (std::size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(masked.values[i] - ref[i]) <= 1e-12);
  }
}

TEST_CASE("ste_backward single-unit hand value") {
  net::DenseStack stack;
  net::WeightMatrix w(1, 1);
  w.at(0, 0) = 2.0;
  stack.layers = {w};
  stack.relu_after = {0};
  mask::BinaryMask m;
  m.layers = {{1}};
  mask::ScoreMask s;
  s.layers = {{0.0}};

  mask::ForwardCache cache;
  mask::masked_forward(stack, m, std::vector<double>{3.0}, &cache);
  const auto grads =
      mask::ste_backward(cache, stack, s, std::vector<double>{1.0});
  // upstream * x * w * sigma(s) * sigma'(s) = 1 * 3 * 2 * 0.5 * 0.25
  CHECK(grads.score_grads[0][0] == doctest::Approx(0.75).epsilon(1e-15));
  // input grad flows through w * mask
  CHECK(grads.input_grad[0] == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("ste_backward zero upstream and zero weight coordinates") {
  Rng rng(3);
  net::DenseStack stack;
  auto w = net::kaiming_init(3, 3, rng);
  w.values[4] = 0.0;  // coordinate (1,1)
  stack.layers = {w};
  stack.relu_after = {0};
  const auto shapes = mask::shapes_of(stack);
  const auto m = mask::map_mask(mask::ProbMask::constant(shapes, 1.0));
  mask::ScoreMask s;
  s.layers = {std::vector<double>(9, 0.3)};

  mask::ForwardCache cache;
  mask::masked_forward(stack, m, std::vector<double>{1.0, 2.0, 3.0}, &cache);

  const auto zero_up =
      mask::ste_backward(cache, stack, s, std::vector<double>{0.0, 0.0, 0.0});
  for (double g : zero_up.score_grads[0]) CHECK(g == 0.0);

  const auto grads =
      mask::ste_backward(cache, stack, s, std::vector<double>{1.0, 1.0, 1.0});
  CHECK(grads.score_grads[0][4] == 0.0);
}

TEST_CASE("ste_backward matches the element-wise closed form") {
  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t rows = 1 + trial % 5;
    const std::size_t cols = 1 + (trial / 5) % 5;
    net::DenseStack stack;
    stack.layers.push_back(net::kaiming_init(rows, cols, rng));
    stack.relu_after = {0};
    mask::ScoreMask s;
    s.layers.push_back(std::vector<double>(rows * cols));
    for (double& v : s.layers[0]) v = rng.normal(0.0, 2.0);
    std::vector<double> x(cols), g(rows);
    for (double& v : x) v = rng.normal();
    for (double& v : g) v = rng.normal();
    const auto theta = mask::probs_from_scores(s);
    const auto m = mask::sample_mask(theta, rng);

    mask::ForwardCache cache;
    mask::masked_forward(stack, m, x, &cache);
    const auto grads = mask::ste_backward(cache, stack, s, g);

    const auto& w = stack.layers[0];
    for (std::size_t i = 0; i < rows; ++i) {
      for (std::size_t j = 0; j < cols; ++j) {
        const double sv = s.layers[0][i * cols + j];
        const double sig = 1.0 / (1.0 + std::exp(-sv));
        const double expect =
            g[i] * x[j] * w.at(i, j) * sig * (sig * (1.0 - sig));
        CHECK(std::abs(grads.score_grads[0][i * cols + j] - expect) <= 1e-12);
      }
    }
  }
}

TEST_CASE("ste_backward input grad equals the transpose chain on linear stacks") {
  Rng rng(53);
  const std::vector<std::size_t> dims{4, 4, 4};
  auto stack = random_linear_stack(dims, rng);
  const auto shapes = mask::shapes_of(stack);
  const auto theta = mask::ProbMask::constant(shapes, 0.7);
  const auto m = mask::sample_mask(theta, rng);
  mask::ScoreMask s;
  for (const auto& sh : shapes)
    s.layers.push_back(std::vector<double>(sh.rows * sh.cols, 0.4));

  std::vector<double> x(4), g(4);
  for (double& v : x) v = rng.normal();
  for (double& v : g) v = rng.normal();

  mask::ForwardCache cache;
  mask::masked_forward(stack, m, x, &cache);
  const auto grads = mask::ste_backward(cache, stack, s, g);

  // Explicit (W1 o M1)^T (W2 o M2)^T g.
  std::vector<double> ref = g;
  for (std::size_t li = stack.layers.size(); li-- > 0;) {
    const auto& w = stack.layers[li];
    std::vector<double> next(w.cols, 0.0);
    for (std::size_t j = 0; j < w.cols; ++j)
      for (std::size_t i = 0; i < w.rows; ++i)
        if (m.layers[li][i * w.cols + j])
          next[j] += w.at(i, j) * ref[i];
    ref = std::move(next);
  }
  for (std::size_t j = 0; j < 4; ++j)
    CHECK(std::abs(grads.input_grad[j] - ref[j]) <= 1e-10);
}

TEST_CASE("ste_backward rejects stale caches") {
  const auto stack = two_layer_stack();
  const auto shapes = mask::shapes_of(stack);
  const auto m = mask::map_mask(mask::ProbMask::constant(shapes, 1.0));
  mask::ScoreMask s;
  for (const auto& sh : shapes)
    s.layers.push_back(std::vector<double>(sh.rows * sh.cols, 0.0));
  mask::ForwardCache cache;
  mask::masked_forward(stack, m, std::vector<double>{1.0, 1.0}, &cache);
  cache.inputs[0].pop_back();  // simulate shape drift
  CHECK_THROWS_AS(
      mask::ste_backward(cache, stack, s, std::vector<double>{1.0, 1.0}),
      Error);
}

TEST_CASE("apply_score_update basics and accumulator oracle") {
  mask::ScoreMask s;
  s.layers = {{1.0, -2.0}, {0.5}};

  const std::vector<std::vector<double>> zero{{0.0, 0.0}, {0.0}};
  const auto unchanged = mask::apply_score_update(s, zero, 4, 1e-3);
  CHECK(unchanged.layers == s.layers);

  const std::vector<std::vector<double>> g{{0.25, -1.0}, {2.0}};
  const auto stepped = mask::apply_score_update(s, g, 1, 1.0);
  CHECK(stepped.layers[0][0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(stepped.layers[0][1] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(stepped.layers[1][0] == doctest::Approx(-1.5).epsilon(1e-15));

  // Independent scalar re-summation over a synthetic batch of 32.
  Rng rng(8);
  std::vector<std::vector<double>> acc{{0.0, 0.0}, {0.0}};
  std::vector<std::vector<std::vector<double>>> samples;
  for (int i = 0; i < 32; ++i) {
    std::vector<std::vector<double>> gi{{rng.normal(), rng.normal()},
                                        {rng.normal()}};
    for (std::size_t li = 0; li < acc.size(); ++li)
      for (std::size_t k = 0; k < acc[li].size(); ++k)
        acc[li][k] += gi[li][k];
    samples.push_back(std::move(gi));
  }
  const double lr = 1e-3;
  const auto updated = mask::apply_score_update(s, acc, 32, lr);
  for (std::size_t li = 0; li < s.layers.size(); ++li) {
    for (std::size_t k = 0; k < s.layers[li].size(); ++k) {
      double total = 0.0;
      for (const auto& gi : samples) total += gi[li][k];
      const double expect = s.layers[li][k] - lr * total / 32.0;
      CHECK(std::abs(updated.layers[li][k] - expect) <= 1e-12);
    }
  }
}

TEST_CASE("apply_score_update requires a positive batch") {
  mask::ScoreMask s;
  s.layers = {{0.0}};
  CHECK_THROWS_AS(mask::apply_score_update(s, {{1.0}}, 0, 1.0), Error);
}

TEST_CASE("scores_from_probs rejects saturated probabilities") {
  mask::ProbMask theta;
  theta.layers = {{0.5, 1.0}};
  CHECK_THROWS_AS(mask::scores_from_probs(theta), Error);
}
