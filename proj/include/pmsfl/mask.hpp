#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pmsfl/net.hpp"
#include "pmsfl/rng.hpp"

namespace pmsfl::mask {

struct LayerShape {
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool operator==(const LayerShape&) const = default;
};
using Shapes = std::vector<LayerShape>;

Shapes shapes_of(const net::DenseStack& stack);
std::size_t total_params(const Shapes& shapes);

// Unbounded per-layer scores s; theta = logistic(s) gates the weights.
struct ScoreMask {
  std::vector<std::vector<double>> layers;
};

// Per-layer keep probabilities in [0,1].
struct ProbMask {
  std::vector<std::vector<double>> layers;

  static ProbMask constant(const Shapes& shapes, double value);
};

// Per-layer sampled bits.
struct BinaryMask {
  std::vector<std::vector<std::uint8_t>> layers;
};

Shapes shapes_of(const ScoreMask& m);
Shapes shapes_of(const ProbMask& m, const Shapes& ref);

ProbMask probs_from_scores(const ScoreMask& scores);
// Element-wise logistic inverse; throws on entries at 0 or 1.
ScoreMask scores_from_probs(const ProbMask& theta);

// Each bit independently 1 with probability theta_j, layer-major order.
BinaryMask sample_mask(const ProbMask& theta, Rng& rng);

// Deterministic threshold mask: 1 iff theta >= 0.5. Used for evaluation.
BinaryMask map_mask(const ProbMask& theta);

// Per-layer quantities recorded by masked_forward for the STE backward
// pass; single-use, tied to the (stack, mask, input) that produced it.
struct ForwardCache {
  std::vector<std::vector<double>> inputs;   // x_i per layer
  std::vector<std::vector<double>> pre_act;  // y_i = (W_i o M_i) x_i
  BinaryMask masks;
  std::vector<double> output;
};

// f_{w o M}(x): dense stack forward with element-wise masked weights.
net::Activation masked_forward(const net::DenseStack& stack,
                               const BinaryMask& m, std::span<const double> x,
                               ForwardCache* cache = nullptr);

// Soft-mask forward: weights scaled by per-element real factors (used by
// attackers holding theta rather than a sampled mask).
std::vector<double> soft_masked_forward(const net::DenseStack& stack,
                                        const ProbMask& theta,
                                        std::span<const double> x);

struct SteGrads {
  std::vector<std::vector<double>> score_grads;  // per layer, row-major
  std::vector<double> input_grad;
};

// Straight-through backward: per-element score gradient is
//   (backprop signal at the layer) * x * w * logistic(s) * logistic'(s),
// treating the Bernoulli draw as differentiable with derivative equal to
// the probability mask. The input gradient flows through the sampled
// masked weights (W o M).
SteGrads ste_backward(const ForwardCache& cache, const net::DenseStack& stack,
                      const ScoreMask& scores, std::span<const double> upstream);

// s <- s - lr * (1/batch_size) * grad_sum.
ScoreMask apply_score_update(const ScoreMask& scores,
                             const std::vector<std::vector<double>>& grad_sum,
                             std::size_t batch_size, double lr);

void accumulate(std::vector<std::vector<double>>& acc, const SteGrads& g);

}  // namespace pmsfl::mask
