#include "pmsfl/attack.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "pmsfl/error.hpp"
#include "pmsfl/linalg.hpp"

namespace pmsfl::attack {

const char* mask_knowledge_name(MaskKnowledge k) {
  switch (k) {
    case MaskKnowledge::kExact: return "exact";
    case MaskKnowledge::kProbabilistic: return "probabilistic";
    case MaskKnowledge::kNone: return "none";
  }
  return "unknown";
}

MaskKnowledge mask_knowledge_from_name(const std::string& name) {
  if (name == "exact") return MaskKnowledge::kExact;
  if (name == "probabilistic") return MaskKnowledge::kProbabilistic;
  if (name == "none") return MaskKnowledge::kNone;
  fail(ErrorCode::kInvalidConfig, "unknown mask knowledge: " + name);
}

namespace {

// The attacker's forward model: the victim stack with per-element weight
// factors folded in (sampled bits, theta, or nothing).
net::DenseStack effective_stack(const VictimView& victim,
                                MaskKnowledge knowledge) {
  if (!victim.stack) fail(ErrorCode::kInvalidConfig, "dlg_attack: no victim");
  net::DenseStack eff = *victim.stack;
  switch (knowledge) {
    case MaskKnowledge::kExact: {
      if (!victim.exact_mask ||
          victim.exact_mask->layers.size() != eff.layers.size())
        fail(ErrorCode::kInvalidConfig, "dlg_attack: exact mask missing");
      for (std::size_t li = 0; li < eff.layers.size(); ++li) {
        auto& w = eff.layers[li];
        w.frozen = false;
        for (std::size_t k = 0; k < w.values.size(); ++k)
          w.values[k] *= victim.exact_mask->layers[li][k];
      }
      break;
    }
    case MaskKnowledge::kProbabilistic: {
      if (!victim.theta || victim.theta->layers.size() != eff.layers.size())
        fail(ErrorCode::kInvalidConfig, "dlg_attack: theta missing");
      for (std::size_t li = 0; li < eff.layers.size(); ++li) {
        auto& w = eff.layers[li];
        w.frozen = false;
        for (std::size_t k = 0; k < w.values.size(); ++k)
          w.values[k] *= victim.theta->layers[li][k];
      }
      break;
    }
    case MaskKnowledge::kNone:
      break;
  }
  return eff;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

linalg::Mat masked_matrix(const net::WeightMatrix& w,
                          const std::vector<std::uint8_t>& bits) {
  linalg::Mat m(w.rows, w.cols);
  for (std::size_t k = 0; k < w.values.size(); ++k)
    m.a[k] = bits[k] ? w.values[k] : 0.0;
  return m;
}

}  // namespace

AttackReport dlg_attack(std::span<const double> observed,
                        const VictimView& victim, MaskKnowledge knowledge,
                        std::size_t budget, double step, Rng& rng,
                        std::span<const double> truth,
                        std::span<const double> init) {
  const net::DenseStack eff = effective_stack(victim, knowledge);
  if (observed.size() != eff.output_width())
    fail(ErrorCode::kInvalidShape, "dlg_attack: observed width");

  const std::size_t dim = eff.input_width();
  std::vector<double> x(dim);
  if (!init.empty()) {
    if (init.size() != dim)
      fail(ErrorCode::kInvalidShape, "dlg_attack: init length");
    std::copy(init.begin(), init.end(), x.begin());
  } else {
    for (double& v : x) v = rng.normal(0.0, 1.0);
  }

  auto objective_of = [&](const std::vector<double>& probe,
                          net::StackCache* cache) {
    std::vector<double> out = net::stack_forward(eff, probe, cache);
    double obj = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double r = out[i] - observed[i];
      obj += r * r;
    }
    return std::pair(obj, std::move(out));
  };

  net::StackCache cache;
  auto [obj, out] = objective_of(x, &cache);
  std::vector<double> best = x;
  double best_obj = obj;
  std::size_t iters = 0;
  constexpr double kConvergedObj = 1e-20;
  constexpr double kMinStep = 1e-18;

  AttackReport report;
  report.objective_trace.push_back(obj);

  while (iters < budget && obj > kConvergedObj && step > kMinStep) {
    ++iters;
    std::vector<double> upstream(out.size());
    for (std::size_t i = 0; i < out.size(); ++i)
      upstream[i] = 2.0 * (out[i] - observed[i]);
    const net::StackGrads grads = net::stack_backward(eff, cache, upstream);

    bool accepted = false;
    while (step > kMinStep) {
      std::vector<double> cand(dim);
      for (std::size_t i = 0; i < dim; ++i)
        cand[i] = x[i] - step * grads.input_grad[i];
      auto [cand_obj, cand_out] = objective_of(cand, &cache);
      if (cand_obj <= obj) {
        x = std::move(cand);
        obj = cand_obj;
        out = std::move(cand_out);
        accepted = true;
        // Probe a larger step next round; the halving loop pulls it back
        // whenever the objective would rise.
        step *= 2.0;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // step floor reached; x unchanged
    report.objective_trace.push_back(obj);
    if (obj < best_obj) {
      best_obj = obj;
      best = x;
    }
  }

  report.reconstructed = std::move(best);
  report.iterations_used = iters;
  report.objective = best_obj;
  report.converged = best_obj <= kConvergedObj;
  report.error = truth.empty()
                     ? 0.0
                     : l2_distance(truth, report.reconstructed);
  return report;
}

std::vector<double> analytic_inversion(std::span<const double> y,
                                       const net::WeightMatrix& w,
                                       const mask::BinaryMask& m_guess) {
  if (w.rows != w.cols)
    fail(ErrorCode::kInvalidShape, "analytic_inversion: W must be square");
  if (y.size() != w.rows)
    fail(ErrorCode::kInvalidShape, "analytic_inversion: y length");
  if (m_guess.layers.size() != 1 || m_guess.layers[0].size() != w.size())
    fail(ErrorCode::kInvalidShape, "analytic_inversion: mask shape");
  const linalg::Mat a = masked_matrix(w, m_guess.layers[0]);
  return linalg::solve(a, std::vector<double>(y.begin(), y.end()), 1e12);
}

EmpiricalErrorReport empirical_reconstruction_error(const net::WeightMatrix& w,
                                                    const mask::ProbMask& theta,
                                                    std::span<const double> x,
                                                    std::size_t trials,
                                                    Rng& rng) {
  if (w.rows != w.cols)
    fail(ErrorCode::kInvalidShape,
         "empirical_reconstruction_error: W must be square");
  if (x.size() != w.cols)
    fail(ErrorCode::kInvalidShape,
         "empirical_reconstruction_error: input length");

  EmpiricalErrorReport report;
  report.trials = trials;
  double total = 0.0;
  const std::vector<double> x_vec(x.begin(), x.end());
  for (std::size_t t = 0; t < trials; ++t) {
    const mask::BinaryMask m_true = mask::sample_mask(theta, rng);
    const linalg::Mat a_true = masked_matrix(w, m_true.layers[0]);
    const std::vector<double> y = linalg::matvec(a_true, x_vec);
    const mask::BinaryMask m_guess = mask::sample_mask(theta, rng);
    try {
      const std::vector<double> x_hat = analytic_inversion(y, w, m_guess);
      total += l2_distance(x, x_hat);
      ++report.inverted;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSingular) throw;
      ++report.singular_skips;
    }
  }
  if (report.inverted == 0) {
    report.degenerate = true;
    report.mean_error = 0.0;
  } else {
    report.mean_error = total / static_cast<double>(report.inverted);
  }
  return report;
}

CascadeResult score_gradient_cascade(
    const std::vector<std::vector<double>>& score_grads,
    const std::vector<std::vector<double>>& outputs,
    const net::DenseStack& stack, const mask::BinaryMask& masks,
    const mask::ScoreMask& scores, std::span<const double> final_grad) {
  const std::size_t depth = stack.layers.size();
  if (depth == 0) fail(ErrorCode::kInvalidShape, "cascade: empty stack");
  if (score_grads.size() != depth || outputs.size() != depth ||
      masks.layers.size() != depth || scores.layers.size() != depth)
    fail(ErrorCode::kInvalidShape, "cascade: per-layer input counts");
  for (std::size_t li = 0; li < depth; ++li)
    if (stack.relu_after[li])
      fail(ErrorCode::kInvalidConfig, "cascade: linear stacks only");
  if (final_grad.size() != stack.output_width())
    fail(ErrorCode::kInvalidShape, "cascade: final gradient width");

  // Every masked layer must stay invertible for the downward recursion.
  for (std::size_t li = 0; li < depth; ++li) {
    const net::WeightMatrix& w = stack.layers[li];
    if (w.rows != w.cols)
      fail(ErrorCode::kInvalidShape, "cascade: layers must be square");
    const linalg::Mat a = masked_matrix(w, masks.layers[li]);
    const auto sv = linalg::singular_values(a);
    if (sv.back() <= 0.0 || sv.front() / sv.back() > 1e12)
      fail(ErrorCode::kSingular,
           "cascade: masked layer " + std::to_string(li) + " is singular");
  }

  CascadeResult result;
  result.layer_inputs.resize(depth);
  std::vector<double> delta(final_grad.begin(), final_grad.end());
  constexpr double kDivisorFloor = 1e-12;
  for (std::size_t li = depth; li-- > 0;) {
    const net::WeightMatrix& w = stack.layers[li];
    const auto& grad = score_grads[li];
    const auto& s = scores.layers[li];
    if (grad.size() != w.size())
      fail(ErrorCode::kInvalidShape, "cascade: score gradient shape");

    // grad[j,k] = delta[j] * x[k] * w[j,k] * sig(s) * sig'(s); divide the
    // largest-magnitude factor out per column.
    std::vector<double> x(w.cols, 0.0);
    for (std::size_t j = 0; j < w.cols; ++j) {
      double best_div = 0.0;
      std::size_t best_row = 0;
      for (std::size_t i = 0; i < w.rows; ++i) {
        const std::size_t k = i * w.cols + j;
        const double sig = net::logistic(s[k]);
        const double div = delta[i] * w.values[k] * sig * sig * (1.0 - sig);
        if (std::abs(div) > std::abs(best_div)) {
          best_div = div;
          best_row = i;
        }
      }
      if (std::abs(best_div) < kDivisorFloor)
        fail(ErrorCode::kUnrecoverable,
             "cascade: coordinate " + std::to_string(j) + " of layer " +
                 std::to_string(li) + " has no usable divisor");
      x[j] = grad[best_row * w.cols + j] / best_div;
    }
    result.layer_inputs[li] = x;

    if (li > 0) {
      // dL/dx_i = (W_i o M_i)^T dL/dy_i, which is dL/dy_{i-1}.
      std::vector<double> next(w.cols, 0.0);
      const auto& bits = masks.layers[li];
      for (std::size_t j = 0; j < w.cols; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < w.rows; ++i) {
          const std::size_t k = i * w.cols + j;
          if (bits[k]) acc += w.values[k] * delta[i];
        }
        next[j] = acc;
      }
      delta = std::move(next);
    }
  }
  result.input = result.layer_inputs.front();
  return result;
}

}  // namespace pmsfl::attack
