#include "pmsfl/net.hpp"

#include <algorithm>
#include <cmath>

#include "pmsfl/error.hpp"

namespace pmsfl::net {

WeightMatrix kaiming_init(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0)
    fail(ErrorCode::kInvalidShape, "kaiming_init: zero dimension");
  WeightMatrix w(rows, cols, /*frozen=*/true);
  const double stddev = std::sqrt(2.0 / static_cast<double>(cols));
  for (double& v : w.values) v = rng.normal(0.0, stddev);
  return w;
}

Activation dense_forward(const WeightMatrix& w, std::span<const double> x) {
  if (x.size() != w.cols)
    fail(ErrorCode::kInvalidShape, "dense_forward: input length " +
                                       std::to_string(x.size()) +
                                       " != cols " + std::to_string(w.cols));
  Activation out;
  out.values.assign(w.rows, 0.0);
  for (std::size_t i = 0; i < w.rows; ++i) {
    double acc = 0.0;
    const double* row = &w.values[i * w.cols];
    for (std::size_t j = 0; j < w.cols; ++j) acc += row[j] * x[j];
    out.values[i] = acc;
  }
  return out;
}

LossValue cross_entropy(std::span<const double> logits, std::size_t label) {
  if (logits.empty()) fail(ErrorCode::kInvalidShape, "cross_entropy: empty logits");
  if (label >= logits.size())
    fail(ErrorCode::kInvalidLabel, "cross_entropy: label " +
                                       std::to_string(label) + " out of range");
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - m);
  LossValue loss;
  loss.value = -(logits[label] - m - std::log(z));
  if (loss.value < 0.0) loss.value = 0.0;  // guard tiny negative rounding
  loss.grad_wrt_logits.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i)
    loss.grad_wrt_logits[i] = std::exp(logits[i] - m) / z;
  loss.grad_wrt_logits[label] -= 1.0;
  return loss;
}

namespace {
constexpr double kLogisticClamp = 500.0;
}

double logistic(double s) {
  const double c = std::clamp(s, -kLogisticClamp, kLogisticClamp);
  if (c >= 0.0) return 1.0 / (1.0 + std::exp(-c));
  const double e = std::exp(c);
  return e / (1.0 + e);
}

double logistic_prime(double s) {
  const double t = logistic(s);
  return t * (1.0 - t);
}

double logistic_inverse(double theta) {
  if (!(theta > 0.0 && theta < 1.0))
    fail(ErrorCode::kDomain, "logistic_inverse: theta must be in (0,1)");
  return std::log(theta / (1.0 - theta));
}

std::vector<double> logistic(std::span<const double> s) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = logistic(s[i]);
  return out;
}

std::vector<double> logistic_prime(std::span<const double> s) {
  std::vector<double> out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = logistic_prime(s[i]);
  return out;
}

std::vector<double> logistic_inverse(std::span<const double> theta) {
  std::vector<double> out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i)
    out[i] = logistic_inverse(theta[i]);
  return out;
}

std::vector<double> stack_forward(const DenseStack& stack,
                                  std::span<const double> x,
                                  StackCache* cache) {
  if (stack.layers.size() != stack.relu_after.size())
    fail(ErrorCode::kInvalidShape, "stack_forward: relu flag count");
  std::vector<double> cur(x.begin(), x.end());
  if (cache) {
    cache->inputs.clear();
    cache->pre_act.clear();
  }
  for (std::size_t i = 0; i < stack.layers.size(); ++i) {
    if (cache) cache->inputs.push_back(cur);
    Activation a = dense_forward(stack.layers[i], cur);
    if (cache) cache->pre_act.push_back(a.values);
    cur = std::move(a.values);
    if (stack.relu_after[i])
      for (double& v : cur) v = relu(v);
  }
  if (cache) cache->output = cur;
  return cur;
}

StackGrads stack_backward(const DenseStack& stack, const StackCache& cache,
                          std::span<const double> upstream) {
  const std::size_t depth = stack.layers.size();
  if (cache.inputs.size() != depth || cache.pre_act.size() != depth)
    fail(ErrorCode::kInvalidCache, "stack_backward: cache mismatch");
  if (upstream.size() != stack.output_width())
    fail(ErrorCode::kInvalidShape, "stack_backward: upstream length");

  StackGrads grads;
  grads.weight_grads.resize(depth);
  std::vector<double> g(upstream.begin(), upstream.end());
  for (std::size_t li = depth; li-- > 0;) {
    const WeightMatrix& w = stack.layers[li];
    if (stack.relu_after[li])
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] *= relu_prime(cache.pre_act[li][i]);
    const std::vector<double>& x = cache.inputs[li];
    std::vector<double>& wg = grads.weight_grads[li];
    wg.assign(w.rows * w.cols, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i)
      for (std::size_t j = 0; j < w.cols; ++j) wg[i * w.cols + j] = g[i] * x[j];
    std::vector<double> gx(w.cols, 0.0);
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.rows; ++i) acc += w.at(i, j) * g[i];
      gx[j] = acc;
    }
    g = std::move(gx);
  }
  grads.input_grad = std::move(g);
  return grads;
}

}  // namespace pmsfl::net
