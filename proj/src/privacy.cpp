#include "pmsfl/privacy.hpp"

#include <cmath>
#include <string>

#include "pmsfl/error.hpp"
#include "pmsfl/linalg.hpp"

namespace pmsfl::privacy {

const char* mechanism_name(Mechanism m) {
  switch (m) {
    case Mechanism::kNone: return "none";
    case Mechanism::kLaplaceForward: return "laplace-forward";
    case Mechanism::kGaussianUpdate: return "gaussian-update";
    case Mechanism::kGaussianMask: return "gaussian-mask";
  }
  return "unknown";
}

Mechanism mechanism_from_name(const std::string& name) {
  if (name == "none") return Mechanism::kNone;
  if (name == "laplace-forward") return Mechanism::kLaplaceForward;
  if (name == "gaussian-update") return Mechanism::kGaussianUpdate;
  if (name == "gaussian-mask") return Mechanism::kGaussianMask;
  fail(ErrorCode::kInvalidConfig, "unknown privacy mechanism: " + name);
}

std::vector<double> laplace_noise(double scale, std::size_t n, Rng& rng) {
  if (!(scale > 0.0))
    fail(ErrorCode::kInvalidConfig, "laplace_noise: scale must be positive");
  std::vector<double> z(n);
  for (double& v : z) v = rng.laplace(scale);
  return z;
}

std::vector<double> gaussian_noise(double sigma, std::size_t n, Rng& rng) {
  if (!(sigma > 0.0))
    fail(ErrorCode::kInvalidConfig, "gaussian_noise: sigma must be positive");
  std::vector<double> z(n);
  for (double& v : z) v = rng.normal(0.0, sigma);
  return z;
}

std::vector<double> clip_update(std::span<const double> g, double bound) {
  if (!(bound > 0.0))
    fail(ErrorCode::kInvalidConfig, "clip_update: bound must be positive");
  double norm2 = 0.0;
  for (double v : g) norm2 += v * v;
  const double norm = std::sqrt(norm2);
  std::vector<double> out(g.begin(), g.end());
  if (norm > bound) {
    const double scale = bound / norm;
    for (double& v : out) v *= scale;
  }
  return out;
}

mask::ScoreMask noisy_score_update(const mask::ScoreMask& scores,
                                   const std::vector<std::vector<double>>& grad_sum,
                                   std::size_t batch_size, double sigma,
                                   Rng& rng) {
  mask::ScoreMask next = mask::apply_score_update(scores, grad_sum, batch_size,
                                                  /*lr=*/1.0);
  if (sigma > 0.0)
    for (auto& layer : next.layers)
      for (double& v : layer) v += rng.normal(0.0, sigma);
  return next;
}

mask::ProbMask noisy_mask_probs(const mask::ProbMask& theta, double sigma,
                                double c, Rng& rng) {
  if (!(c > 0.0 && c < 0.5))
    fail(ErrorCode::kDomain, "noisy_mask_probs: c must be in (0, 0.5)");
  mask::ProbMask out = theta;
  for (auto& layer : out.layers) {
    for (double& v : layer) {
      if (sigma > 0.0) v += rng.normal(0.0, sigma);
      v = std::min(1.0 - c, std::max(c, v));
    }
  }
  return out;
}

double epsilon_amp_forward(double epsilon, double c, std::uint32_t d) {
  if (!(epsilon >= 0.0))
    fail(ErrorCode::kDomain, "epsilon_amp_forward: epsilon must be >= 0");
  if (!(c > 0.0 && c < 0.5))
    fail(ErrorCode::kDomain, "epsilon_amp_forward: c must be in (0, 0.5)");
  if (d == 0) fail(ErrorCode::kDomain, "epsilon_amp_forward: d must be >= 1");
  // ln((1 - c^d) e^eps + c^d) = log1p((1 - c^d) (e^eps - 1))
  const double cd = std::pow(c, static_cast<double>(d));
  return std::log1p((1.0 - cd) * std::expm1(epsilon));
}

double sigma_for_update_noise(std::uint32_t rounds, double gamma,
                              double epsilon, double delta,
                              std::uint32_t batch) {
  if (rounds == 0 || batch == 0)
    fail(ErrorCode::kDomain, "sigma_for_update_noise: counts must be >= 1");
  if (!(gamma > 0.0) || !(epsilon > 0.0))
    fail(ErrorCode::kDomain, "sigma_for_update_noise: gamma, epsilon > 0");
  if (!(delta > 0.0 && delta < 1.0))
    fail(ErrorCode::kDomain, "sigma_for_update_noise: delta must be in (0,1)");
  const double r = static_cast<double>(rounds);
  const double q = static_cast<double>(batch);
  return 2.0 * r * gamma * gamma * std::log(1.0 / delta) /
         (epsilon * epsilon * q * q);
}

double sigma_for_mask_noise(double c, double epsilon, double delta) {
  if (!(c > 0.0 && c < 0.5))
    fail(ErrorCode::kDomain, "sigma_for_mask_noise: c must be in (0, 0.5)");
  if (!(epsilon > 0.0))
    fail(ErrorCode::kDomain, "sigma_for_mask_noise: epsilon must be > 0");
  if (!(delta > 0.0 && delta < 1.0))
    fail(ErrorCode::kDomain, "sigma_for_mask_noise: delta must be in (0,1)");
  const double width = 1.0 - 2.0 * c;
  return 2.0 * width * width * std::log(1.25 / delta) / (epsilon * epsilon);
}

double bernoulli_amplified_epsilon(double epsilon, double c, std::uint32_t d_b,
                                   std::span<const double> alpha_grid,
                                   bool printed_form) {
  if (!(epsilon >= 0.0))
    fail(ErrorCode::kDomain, "bernoulli_amplified_epsilon: epsilon >= 0");
  if (!(c > 0.0 && c <= 0.5))
    fail(ErrorCode::kDomain, "bernoulli_amplified_epsilon: c in (0, 0.5]");
  if (d_b == 0)
    fail(ErrorCode::kDomain, "bernoulli_amplified_epsilon: d_b >= 1");
  if (alpha_grid.empty())
    fail(ErrorCode::kInvalidConfig, "bernoulli_amplified_epsilon: empty grid");

  const double log_c = std::log(c);
  const double log_1mc = std::log1p(-c);
  double best = epsilon;
  for (double alpha : alpha_grid) {
    if (!(alpha > 1.0))
      fail(ErrorCode::kDomain, "bernoulli_amplified_epsilon: alpha must be > 1");
    const double t1 = printed_form
                          ? std::exp(alpha * log_1mc + (1.0 - alpha) * log_c)
                          : std::exp(alpha * log_c + (1.0 - alpha) * log_1mc);
    const double t2 = std::exp(alpha * log_1mc + (1.0 - alpha) * log_c);
    const double term =
        static_cast<double>(d_b) / (alpha - 1.0) * std::log(t1 + t2);
    if (term < best) best = term;
  }
  return best;
}

namespace {

linalg::Mat hadamard(const net::WeightMatrix& w,
                     const std::vector<double>& factors) {
  linalg::Mat m(w.rows, w.cols);
  for (std::size_t k = 0; k < w.values.size(); ++k)
    m.a[k] = w.values[k] * factors[k];
  return m;
}

}  // namespace

BoundReport reconstruction_bound(const net::WeightMatrix& w,
                                 const mask::BinaryMask& m,
                                 const mask::ProbMask& theta,
                                 std::span<const double> x,
                                 bool collect_terms) {
  if (w.rows != w.cols)
    fail(ErrorCode::kInvalidShape, "reconstruction_bound: W must be square");
  if (x.size() != w.cols)
    fail(ErrorCode::kInvalidShape, "reconstruction_bound: input length");
  if (m.layers.size() != 1 || theta.layers.size() != 1 ||
      m.layers[0].size() != w.size() || theta.layers[0].size() != w.size())
    fail(ErrorCode::kInvalidShape,
         "reconstruction_bound: mask/theta must be single-layer, congruent");
  const std::size_t bits = w.size();
  if (bits > 20)
    fail(ErrorCode::kBudget,
         "reconstruction_bound: enumeration over " + std::to_string(bits) +
             " bits exceeds the 20-bit budget");
  {
    linalg::Mat wm(w.rows, w.cols);
    wm.a = w.values;
    if (linalg::sigma_min(wm) <= 0.0)
      fail(ErrorCode::kSingular, "reconstruction_bound: W is singular");
  }

  double x_norm2 = 0.0;
  for (double v : x) x_norm2 += v * v;
  const double x_norm = std::sqrt(x_norm2);

  const auto& mask_bits = m.layers[0];
  const auto& probs = theta.layers[0];

  BoundReport report;
  report.enumeration_size = std::size_t{1} << bits;
  if (collect_terms) report.per_mask_terms.emplace();

  std::vector<double> guess(bits, 0.0);
  std::vector<double> diff(bits, 0.0);
  for (std::size_t code = 0; code < report.enumeration_size; ++code) {
    double prob = 1.0;
    bool equal = true;
    for (std::size_t k = 0; k < bits; ++k) {
      const double bit = (code >> k) & 1u;
      guess[k] = bit;
      diff[k] = bit - static_cast<double>(mask_bits[k]);
      prob *= bit != 0.0 ? probs[k] : 1.0 - probs[k];
      if (diff[k] != 0.0) equal = false;
    }
    double term = 0.0;
    if (!equal && prob > 0.0) {
      const linalg::Mat guess_mat = hadamard(w, guess);
      const auto guess_sv = linalg::singular_values(guess_mat);
      const double smax = guess_sv.front();
      const double smin_guess = guess_sv.back();
      // Singular guesses cannot be inverted by the attacker; they
      // contribute nothing to the bound.
      if (smin_guess > smax * 1e-12 && smax > 0.0) {
        const linalg::Mat diff_mat = hadamard(w, diff);
        const double smin = linalg::sigma_min(diff_mat);
        term = prob * smin / smax * x_norm;
      }
    }
    report.bound += term;
    if (collect_terms) report.per_mask_terms->push_back(term);
  }
  return report;
}

double forward_sensitivity(const net::DenseStack& stack, double linf_bound) {
  if (!(linf_bound > 0.0))
    fail(ErrorCode::kInvalidConfig, "forward_sensitivity: bound must be > 0");
  if (stack.layers.empty())
    fail(ErrorCode::kInvalidShape, "forward_sensitivity: empty stack");
  double lipschitz = 1.0;
  for (const auto& w : stack.layers) {
    double fro2 = 0.0;
    for (double v : w.values) fro2 += v * v;
    lipschitz *= std::sqrt(fro2);
  }
  const double diameter =
      2.0 * linf_bound * std::sqrt(static_cast<double>(stack.input_width()));
  return lipschitz * diameter;
}

}  // namespace pmsfl::privacy
