#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pmsfl/mask.hpp"
#include "pmsfl/net.hpp"
#include "pmsfl/rng.hpp"

namespace pmsfl::attack {

enum class MaskKnowledge { kExact, kProbabilistic, kNone };

const char* mask_knowledge_name(MaskKnowledge k);
MaskKnowledge mask_knowledge_from_name(const std::string& name);

struct AttackReport {
  std::vector<double> reconstructed;
  double error = 0.0;  // |x - x_hat| when the truth is supplied
  std::size_t iterations_used = 0;
  bool converged = false;
  double objective = 0.0;
  std::vector<double> objective_trace;  // one entry per accepted iterate
};

// What the attacker can see of the victim's bottom model. The stack (the
// architecture and frozen weights) is always known; the sampled mask or
// the probability mask only under the matching knowledge level.
struct VictimView {
  const net::DenseStack* stack = nullptr;
  const mask::BinaryMask* exact_mask = nullptr;  // knowledge = exact
  const mask::ProbMask* theta = nullptr;         // knowledge = probabilistic
};

// Activation-matching reconstruction: gradient descent on a dummy input
// minimizing |f(x_dummy) - observed|^2, with step halving whenever a step
// would increase the objective. Returns the best iterate. The dummy is
// drawn from the rng unless an explicit init is given.
AttackReport dlg_attack(std::span<const double> observed,
                        const VictimView& victim, MaskKnowledge knowledge,
                        std::size_t budget, double step, Rng& rng,
                        std::span<const double> truth = {},
                        std::span<const double> init = {});

// x_hat = (W o M_guess)^{-1} y. Rejects guesses whose masked matrix has a
// condition number above 1e12.
std::vector<double> analytic_inversion(std::span<const double> y,
                                       const net::WeightMatrix& w,
                                       const mask::BinaryMask& m_guess);

struct EmpiricalErrorReport {
  double mean_error = 0.0;
  std::size_t trials = 0;
  std::size_t inverted = 0;
  std::size_t singular_skips = 0;
  bool degenerate = false;  // every guess was singular
};

// Theorem-1 style trials: sample the true mask, form the smashed data,
// sample a guess mask, invert, and average the reconstruction error over
// the invertible guesses.
EmpiricalErrorReport empirical_reconstruction_error(const net::WeightMatrix& w,
                                                    const mask::ProbMask& theta,
                                                    std::span<const double> x,
                                                    std::size_t trials,
                                                    Rng& rng);

struct CascadeResult {
  std::vector<double> input;                        // recovered x_1
  std::vector<std::vector<double>> layer_inputs;    // recovered x_i per layer
};

// Leakage cascade over a linear stack: recovers each layer input from its
// score gradient by dividing out the known factors, then propagates the
// loss gradient down through the sampled masked weights. All quantities a
// server would see if clients transmitted score gradients.
CascadeResult score_gradient_cascade(
    const std::vector<std::vector<double>>& score_grads,
    const std::vector<std::vector<double>>& outputs,
    const net::DenseStack& stack, const mask::BinaryMask& masks,
    const mask::ScoreMask& scores, std::span<const double> final_grad);

}  // namespace pmsfl::attack
