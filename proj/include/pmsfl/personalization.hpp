#pragma once

#include <cstdint>
#include <vector>

#include "pmsfl/mask.hpp"

namespace pmsfl::personalization {

// Per-parameter flags marking masks kept local. Grows monotonically over
// rounds, up to ratio_cap * d coordinates.
struct PersonalizationIndicator {
  std::vector<std::vector<std::uint8_t>> layers;

  static PersonalizationIndicator zeros(const mask::Shapes& shapes);
  std::size_t count() const;
  std::size_t size() const;
};

struct DeltaReport {
  std::vector<std::vector<double>> abs_delta;
  std::vector<std::vector<std::uint8_t>> disagree;  // crossed the 0.5 line

  std::size_t disagree_count() const;
};

// |delta| = |after - before|; a coordinate disagrees iff its probability
// crossed 0.5 strictly ((before-0.5)*(after-0.5) < 0); landing exactly on
// 0.5 counts as agreement.
DeltaReport compute_delta(const mask::ProbMask& before,
                          const mask::ProbMask& after);

// Adds up to `increment` coordinates not already set: disagreeing
// coordinates first in descending |delta|, then agreeing ones, saturating
// at floor(ratio_cap * d) total.
PersonalizationIndicator grow_indicator(const PersonalizationIndicator& prev,
                                        const DeltaReport& report,
                                        std::size_t increment,
                                        double ratio_cap);

// theta_j = sum_i M_ij (1 - I_ij) / sum_i (1 - I_ij); coordinates every
// client personalized keep their previous global value.
mask::ProbMask hetero_aggregate(
    const std::vector<const mask::BinaryMask*>& masks,
    const std::vector<const PersonalizationIndicator*>& indicators,
    const mask::ProbMask& theta_prev);

}  // namespace pmsfl::personalization
