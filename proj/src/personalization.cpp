#include "pmsfl/personalization.hpp"

#include <algorithm>
#include <cmath>

#include "pmsfl/error.hpp"

namespace pmsfl::personalization {

PersonalizationIndicator PersonalizationIndicator::zeros(
    const mask::Shapes& shapes) {
  PersonalizationIndicator ind;
  ind.layers.reserve(shapes.size());
  for (const auto& s : shapes)
    ind.layers.emplace_back(s.rows * s.cols, std::uint8_t{0});
  return ind;
}

std::size_t PersonalizationIndicator::count() const {
  std::size_t n = 0;
  for (const auto& layer : layers)
    for (std::uint8_t b : layer) n += b;
  return n;
}

std::size_t PersonalizationIndicator::size() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.size();
  return n;
}

std::size_t DeltaReport::disagree_count() const {
  std::size_t n = 0;
  for (const auto& layer : disagree)
    for (std::uint8_t b : layer) n += b;
  return n;
}

DeltaReport compute_delta(const mask::ProbMask& before,
                          const mask::ProbMask& after) {
  if (before.layers.size() != after.layers.size())
    fail(ErrorCode::kInvalidShape, "compute_delta: layer count");
  DeltaReport report;
  report.abs_delta.reserve(before.layers.size());
  report.disagree.reserve(before.layers.size());
  for (std::size_t li = 0; li < before.layers.size(); ++li) {
    const auto& b = before.layers[li];
    const auto& a = after.layers[li];
    if (a.size() != b.size())
      fail(ErrorCode::kInvalidShape, "compute_delta: layer size");
    std::vector<double> delta(b.size());
    std::vector<std::uint8_t> dis(b.size());
    for (std::size_t k = 0; k < b.size(); ++k) {
      delta[k] = std::abs(a[k] - b[k]);
      dis[k] = (b[k] - 0.5) * (a[k] - 0.5) < 0.0 ? 1 : 0;
    }
    report.abs_delta.push_back(std::move(delta));
    report.disagree.push_back(std::move(dis));
  }
  return report;
}

PersonalizationIndicator grow_indicator(const PersonalizationIndicator& prev,
                                        const DeltaReport& report,
                                        std::size_t increment,
                                        double ratio_cap) {
  if (prev.layers.size() != report.abs_delta.size())
    fail(ErrorCode::kInvalidShape, "grow_indicator: layer count");
  PersonalizationIndicator next = prev;
  const std::size_t d = prev.size();
  const std::size_t cap = static_cast<std::size_t>(
      std::floor(std::max(0.0, std::min(1.0, ratio_cap)) *
                 static_cast<double>(d)));
  const std::size_t have = prev.count();
  if (increment == 0 || have >= cap) return next;
  std::size_t budget = std::min(increment, cap - have);

  struct Candidate {
    bool disagree;
    double delta;
    std::size_t layer;
    std::size_t index;
  };
  std::vector<Candidate> cands;
  for (std::size_t li = 0; li < prev.layers.size(); ++li) {
    const auto& taken = prev.layers[li];
    const auto& delta = report.abs_delta[li];
    const auto& dis = report.disagree[li];
    if (delta.size() != taken.size())
      fail(ErrorCode::kInvalidShape, "grow_indicator: layer size");
    for (std::size_t k = 0; k < taken.size(); ++k)
      if (!taken[k]) cands.push_back({dis[k] != 0, delta[k], li, k});
  }
  // Disagree group first, larger changes first; position breaks ties so
  // growth is deterministic.
  std::sort(cands.begin(), cands.end(), [](const Candidate& a,
                                           const Candidate& b) {
    if (a.disagree != b.disagree) return a.disagree;
    if (a.delta != b.delta) return a.delta > b.delta;
    if (a.layer != b.layer) return a.layer < b.layer;
    return a.index < b.index;
  });
  for (const Candidate& c : cands) {
    if (budget == 0) break;
    next.layers[c.layer][c.index] = 1;
    --budget;
  }
  return next;
}

mask::ProbMask hetero_aggregate(
    const std::vector<const mask::BinaryMask*>& masks,
    const std::vector<const PersonalizationIndicator*>& indicators,
    const mask::ProbMask& theta_prev) {
  if (masks.empty() || masks.size() != indicators.size())
    fail(ErrorCode::kInvalidConfig,
         "hetero_aggregate: need equal, nonempty mask/indicator lists");
  const std::size_t layer_count = theta_prev.layers.size();
  for (std::size_t i = 0; i < masks.size(); ++i) {
    if (masks[i]->layers.size() != layer_count ||
        indicators[i]->layers.size() != layer_count)
      fail(ErrorCode::kInvalidShape, "hetero_aggregate: layer count");
  }
  mask::ProbMask theta = theta_prev;
  for (std::size_t li = 0; li < layer_count; ++li) {
    const std::size_t n = theta_prev.layers[li].size();
    for (std::size_t i = 0; i < masks.size(); ++i)
      if (masks[i]->layers[li].size() != n ||
          indicators[i]->layers[li].size() != n)
        fail(ErrorCode::kInvalidShape, "hetero_aggregate: layer size");
    for (std::size_t k = 0; k < n; ++k) {
      double num = 0.0;
      double den = 0.0;
      for (std::size_t i = 0; i < masks.size(); ++i) {
        if (indicators[i]->layers[li][k]) continue;
        num += masks[i]->layers[li][k];
        den += 1.0;
      }
      if (den > 0.0) theta.layers[li][k] = num / den;
      // den == 0: keep the previous global value.
    }
  }
  return theta;
}

}  // namespace pmsfl::personalization
