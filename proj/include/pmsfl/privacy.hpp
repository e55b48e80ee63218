#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "pmsfl/mask.hpp"
#include "pmsfl/net.hpp"
#include "pmsfl/rng.hpp"

namespace pmsfl::privacy {

enum class Mechanism {
  kNone,
  kLaplaceForward,   // Laplace noise on the smashed data
  kGaussianUpdate,   // Gaussian noise on each clipped local score update
  kGaussianMask,     // Gaussian noise on theta before Bernoulli sampling
};

const char* mechanism_name(Mechanism m);
Mechanism mechanism_from_name(const std::string& name);

struct PrivacySpec {
  Mechanism mechanism = Mechanism::kNone;
  double epsilon = 1.0;
  double delta = 1e-5;
  double clip_bound = 1.0;       // Gamma, update-norm clipping bound
  double clip_c = 0.25;          // c: probabilities clipped into [c, 1-c]
  double sigma = 0.0;            // 0 => calibrate from the sigma thresholds
  double input_linf_bound = 1.0; // declared |x|_inf domain bound
};

std::vector<double> laplace_noise(double scale, std::size_t n, Rng& rng);
std::vector<double> gaussian_noise(double sigma, std::size_t n, Rng& rng);

// g / max(1, |g|_2 / bound). Never increases the norm; idempotent.
std::vector<double> clip_update(std::span<const double> g, double bound);

// s <- s - grad_sum/batch + z with z ~ N(0, sigma^2 I). grad entries are
// expected to be clipped per sample before accumulation.
mask::ScoreMask noisy_score_update(const mask::ScoreMask& scores,
                                   const std::vector<std::vector<double>>& grad_sum,
                                   std::size_t batch_size, double sigma,
                                   Rng& rng);

// clip(theta + z, c, 1-c) element-wise.
mask::ProbMask noisy_mask_probs(const mask::ProbMask& theta, double sigma,
                                double c, Rng& rng);

// ln((1 - c^d) e^eps + c^d): amplified budget for the Laplace-forward
// mechanism under Bernoulli masking with keep probabilities in [c, 1-c].
double epsilon_amp_forward(double epsilon, double c, std::uint32_t d);

// Minimal sigma^2 for (eps, delta)-DP of R composed noisy score updates
// with per-sample clip bound Gamma and batch size |Q_k|.
double sigma_for_update_noise(std::uint32_t rounds, double gamma,
                              double epsilon, double delta,
                              std::uint32_t batch);

// Minimal sigma^2 for (eps, delta)-DP of the noisy-mask mechanism with
// probabilities clipped into [c, 1-c].
double sigma_for_mask_noise(double c, double epsilon, double delta);

inline const std::vector<double>& default_alpha_grid() {
  static const std::vector<double> grid{1.1, 1.25, 1.5, 2.0, 3.0,
                                        5.0, 10.0, 50.0};
  return grid;
}

// min over {eps} and the Renyi terms
//   (d_b/(alpha-1)) * log(c^a (1-c)^{1-a} + (1-c)^a c^{1-a})
// for alpha in grid. With printed_form the first summand is replaced by
// (1-c)^a c^{1-a}, reproducing the non-symmetric variant.
double bernoulli_amplified_epsilon(double epsilon, double c, std::uint32_t d_b,
                                   std::span<const double> alpha_grid,
                                   bool printed_form = false);

struct BoundReport {
  double bound = 0.0;
  std::size_t enumeration_size = 0;
  std::optional<std::vector<double>> per_mask_terms;
};

// Expected-reconstruction-error lower bound: the sum over all guess masks
// M' != M of P(M') * sigma_min(W o (M'-M)) / sigma_max(W o M') * |x|.
// Guesses with singular W o M' contribute zero. Enumerates all 2^(d*d)
// masks of the flattened parameter set; requires d*d <= 20 bits.
BoundReport reconstruction_bound(const net::WeightMatrix& w,
                                 const mask::BinaryMask& m,
                                 const mask::ProbMask& theta,
                                 std::span<const double> x,
                                 bool collect_terms = false);

// Mask-independent upper bound on the forward map's sensitivity over the
// declared domain |x|_inf <= linf_bound (Frobenius norms compose; ReLU is
// 1-Lipschitz; masking never increases a Frobenius norm).
double forward_sensitivity(const net::DenseStack& stack, double linf_bound);

}  // namespace pmsfl::privacy
