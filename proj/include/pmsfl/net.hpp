#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "pmsfl/rng.hpp"

namespace pmsfl::net {

// Dense layer weights, row-major. Frozen matrices are never mutated by the
// mask-training paths; only the weight-training baseline thaws its copies.
struct WeightMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
  bool frozen = true;

  WeightMatrix() = default;
  WeightMatrix(std::size_t r, std::size_t c, bool frozen_ = true)
      : rows(r), cols(c), values(r * c, 0.0), frozen(frozen_) {}

  double& at(std::size_t i, std::size_t j) { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::size_t size() const { return rows * cols; }
};

struct Activation {
  std::vector<double> values;
  std::size_t layer_index = 0;
};

struct LossValue {
  double value = 0.0;
  std::vector<double> grad_wrt_logits;
};

// Entries i.i.d. N(0, 2/fan_in) with fan_in = cols; result is frozen.
WeightMatrix kaiming_init(std::size_t rows, std::size_t cols, Rng& rng);

// y = W x. Throws invalid-shape when len(x) != cols.
Activation dense_forward(const WeightMatrix& w, std::span<const double> x);

// value = -log softmax(logits)[label], grad = softmax(logits) - onehot.
LossValue cross_entropy(std::span<const double> logits, std::size_t label);

// Stable logistic transforms. logistic clamps |s| to 500 before
// exponentiation; logistic_inverse requires theta strictly inside (0,1).
double logistic(double s);
double logistic_prime(double s);
double logistic_inverse(double theta);
std::vector<double> logistic(std::span<const double> s);
std::vector<double> logistic_prime(std::span<const double> s);
std::vector<double> logistic_inverse(std::span<const double> theta);

// Sequence of dense layers; relu_after[i] says whether the output of layer
// i passes through ReLU (all layers except the logits layer in a full
// network; none in linear mode).
struct DenseStack {
  std::vector<WeightMatrix> layers;
  std::vector<std::uint8_t> relu_after;

  std::size_t depth() const { return layers.size(); }
  std::size_t input_width() const {
    return layers.empty() ? 0 : layers.front().cols;
  }
  std::size_t output_width() const {
    return layers.empty() ? 0 : layers.back().rows;
  }
};

// Per-layer records needed by the weight-training backward pass.
struct StackCache {
  std::vector<std::vector<double>> inputs;   // x_i per layer
  std::vector<std::vector<double>> pre_act;  // y_i = W_i x_i before ReLU
  std::vector<double> output;                // post-ReLU final output
};

std::vector<double> stack_forward(const DenseStack& stack,
                                  std::span<const double> x,
                                  StackCache* cache = nullptr);

struct StackGrads {
  std::vector<std::vector<double>> weight_grads;  // row-major per layer
  std::vector<double> input_grad;
};

// Standard dense backprop (weight-training path). upstream is the gradient
// w.r.t. the stack's final (post-ReLU) output.
StackGrads stack_backward(const DenseStack& stack, const StackCache& cache,
                          std::span<const double> upstream);

// ReLU derivative at 0 is defined as 0.
inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double relu_prime(double x) { return x > 0.0 ? 1.0 : 0.0; }

}  // namespace pmsfl::net
