#include "pmsfl/mask.hpp"

#include <string>

#include "pmsfl/error.hpp"

namespace pmsfl::mask {

namespace {

void require_layer_count(std::size_t got, std::size_t want, const char* who) {
  if (got != want)
    fail(ErrorCode::kInvalidShape, std::string(who) + ": layer count " +
                                       std::to_string(got) + " != " +
                                       std::to_string(want));
}

template <typename Layered>
void require_congruent(const Layered& m, const Shapes& shapes,
                       const char* who) {
  require_layer_count(m.layers.size(), shapes.size(), who);
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const std::size_t want = shapes[i].rows * shapes[i].cols;
    if (m.layers[i].size() != want)
      fail(ErrorCode::kInvalidShape,
           std::string(who) + ": layer " + std::to_string(i) + " has " +
               std::to_string(m.layers[i].size()) + " entries, expected " +
               std::to_string(want));
  }
}

}  // namespace

Shapes shapes_of(const net::DenseStack& stack) {
  Shapes s;
  s.reserve(stack.layers.size());
  for (const auto& w : stack.layers) s.push_back({w.rows, w.cols});
  return s;
}

std::size_t total_params(const Shapes& shapes) {
  std::size_t n = 0;
  for (const auto& s : shapes) n += s.rows * s.cols;
  return n;
}

ProbMask ProbMask::constant(const Shapes& shapes, double value) {
  ProbMask p;
  p.layers.reserve(shapes.size());
  for (const auto& s : shapes)
    p.layers.emplace_back(s.rows * s.cols, value);
  return p;
}

ProbMask probs_from_scores(const ScoreMask& scores) {
  ProbMask p;
  p.layers.reserve(scores.layers.size());
  for (const auto& layer : scores.layers) p.layers.push_back(net::logistic(layer));
  return p;
}

ScoreMask scores_from_probs(const ProbMask& theta) {
  ScoreMask s;
  s.layers.reserve(theta.layers.size());
  for (const auto& layer : theta.layers)
    s.layers.push_back(net::logistic_inverse(layer));
  return s;
}

BinaryMask sample_mask(const ProbMask& theta, Rng& rng) {
  BinaryMask m;
  m.layers.reserve(theta.layers.size());
  for (const auto& layer : theta.layers) {
    std::vector<std::uint8_t> bits(layer.size());
    for (std::size_t i = 0; i < layer.size(); ++i)
      bits[i] = rng.bernoulli(layer[i]) ? 1 : 0;
    m.layers.push_back(std::move(bits));
  }
  return m;
}

BinaryMask map_mask(const ProbMask& theta) {
  BinaryMask m;
  m.layers.reserve(theta.layers.size());
  for (const auto& layer : theta.layers) {
    std::vector<std::uint8_t> bits(layer.size());
    for (std::size_t i = 0; i < layer.size(); ++i)
      bits[i] = layer[i] >= 0.5 ? 1 : 0;
    m.layers.push_back(std::move(bits));
  }
  return m;
}

net::Activation masked_forward(const net::DenseStack& stack,
                               const BinaryMask& m, std::span<const double> x,
                               ForwardCache* cache) {
  const Shapes shapes = shapes_of(stack);
  require_congruent(m, shapes, "masked_forward");
  if (x.size() != stack.input_width())
    fail(ErrorCode::kInvalidShape, "masked_forward: input length");

  std::vector<double> cur(x.begin(), x.end());
  if (cache) {
    cache->inputs.clear();
    cache->pre_act.clear();
    cache->masks = m;
  }
  for (std::size_t li = 0; li < stack.layers.size(); ++li) {
    const net::WeightMatrix& w = stack.layers[li];
    const auto& bits = m.layers[li];
    if (cache) cache->inputs.push_back(cur);
    std::vector<double> y(w.rows, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
      double acc = 0.0;
      const double* row = &w.values[i * w.cols];
      const std::uint8_t* mrow = &bits[i * w.cols];
      for (std::size_t j = 0; j < w.cols; ++j)
        if (mrow[j]) acc += row[j] * cur[j];
      y[i] = acc;
    }
    if (cache) cache->pre_act.push_back(y);
    cur = std::move(y);
    if (stack.relu_after[li])
      for (double& v : cur) v = net::relu(v);
  }
  net::Activation out;
  out.layer_index = stack.layers.size();
  out.values = cur;
  if (cache) cache->output = std::move(cur);
  return out;
}

std::vector<double> soft_masked_forward(const net::DenseStack& stack,
                                        const ProbMask& theta,
                                        std::span<const double> x) {
  const Shapes shapes = shapes_of(stack);
  require_congruent(theta, shapes, "soft_masked_forward");
  if (x.size() != stack.input_width())
    fail(ErrorCode::kInvalidShape, "soft_masked_forward: input length");
  std::vector<double> cur(x.begin(), x.end());
  for (std::size_t li = 0; li < stack.layers.size(); ++li) {
    const net::WeightMatrix& w = stack.layers[li];
    const auto& soft = theta.layers[li];
    std::vector<double> y(w.rows, 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < w.cols; ++j)
        acc += w.at(i, j) * soft[i * w.cols + j] * cur[j];
      y[i] = acc;
    }
    cur = std::move(y);
    if (stack.relu_after[li])
      for (double& v : cur) v = net::relu(v);
  }
  return cur;
}

SteGrads ste_backward(const ForwardCache& cache, const net::DenseStack& stack,
                      const ScoreMask& scores, std::span<const double> upstream) {
  const std::size_t depth = stack.layers.size();
  if (cache.inputs.size() != depth || cache.pre_act.size() != depth ||
      cache.masks.layers.size() != depth)
    fail(ErrorCode::kInvalidCache, "ste_backward: cache layer count");
  const Shapes shapes = shapes_of(stack);
  require_congruent(scores, shapes, "ste_backward");
  for (std::size_t li = 0; li < depth; ++li) {
    if (cache.inputs[li].size() != stack.layers[li].cols ||
        cache.pre_act[li].size() != stack.layers[li].rows ||
        cache.masks.layers[li].size() != stack.layers[li].size())
      fail(ErrorCode::kInvalidCache, "ste_backward: stale cache");
  }
  if (upstream.size() != stack.output_width())
    fail(ErrorCode::kInvalidShape, "ste_backward: upstream length");

  SteGrads out;
  out.score_grads.resize(depth);
  std::vector<double> g(upstream.begin(), upstream.end());
  for (std::size_t li = depth; li-- > 0;) {
    const net::WeightMatrix& w = stack.layers[li];
    if (stack.relu_after[li])
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] *= net::relu_prime(cache.pre_act[li][i]);
    const std::vector<double>& x = cache.inputs[li];
    const std::vector<double>& s = scores.layers[li];
    std::vector<double>& sg = out.score_grads[li];
    sg.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.rows; ++i) {
      for (std::size_t j = 0; j < w.cols; ++j) {
        const std::size_t k = i * w.cols + j;
        const double sig = net::logistic(s[k]);
        sg[k] = g[i] * x[j] * w.values[k] * sig * (1.0 - sig) * sig;
      }
    }
    std::vector<double> gx(w.cols, 0.0);
    const auto& bits = cache.masks.layers[li];
    for (std::size_t j = 0; j < w.cols; ++j) {
      double acc = 0.0;
      for (std::size_t i = 0; i < w.rows; ++i) {
        const std::size_t k = i * w.cols + j;
        if (bits[k]) acc += w.values[k] * g[i];
      }
      gx[j] = acc;
    }
    g = std::move(gx);
  }
  out.input_grad = std::move(g);
  return out;
}

ScoreMask apply_score_update(const ScoreMask& scores,
                             const std::vector<std::vector<double>>& grad_sum,
                             std::size_t batch_size, double lr) {
  if (batch_size == 0)
    fail(ErrorCode::kInvalidConfig, "apply_score_update: batch_size >= 1");
  require_layer_count(grad_sum.size(), scores.layers.size(),
                      "apply_score_update");
  ScoreMask next = scores;
  const double scale = lr / static_cast<double>(batch_size);
  for (std::size_t li = 0; li < next.layers.size(); ++li) {
    if (grad_sum[li].size() != next.layers[li].size())
      fail(ErrorCode::kInvalidShape, "apply_score_update: layer size");
    for (std::size_t k = 0; k < next.layers[li].size(); ++k)
      next.layers[li][k] -= scale * grad_sum[li][k];
  }
  return next;
}

void accumulate(std::vector<std::vector<double>>& acc, const SteGrads& g) {
  if (acc.empty()) {
    acc = g.score_grads;
    return;
  }
  require_layer_count(g.score_grads.size(), acc.size(), "accumulate");
  for (std::size_t li = 0; li < acc.size(); ++li)
    for (std::size_t k = 0; k < acc[li].size(); ++k)
      acc[li][k] += g.score_grads[li][k];
}

}  // namespace pmsfl::mask
