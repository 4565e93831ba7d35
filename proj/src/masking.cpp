#include "kmbart/masking.hpp"

#include "kmbart/error.hpp"
#include "kmbart/rng.hpp"

namespace kmbart {

MaskPlan plan_mlm_mask(std::span<const int> positions, std::span<const int> original_ids,
                       const Vocabulary& vocab, std::uint64_t seed) {
  if (positions.size() != original_ids.size()) {
    throw DimensionError("plan_mlm_mask: positions and ids differ in length");
  }
  Rng rng(seed);
  MaskPlan plan;
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (rng.uniform() >= kMaskProbability) continue;
    TextMask m;
    m.position = positions[i];
    const double u = rng.uniform();
    if (u < kMaskTokenShare) {
      m.action = MaskAction::mask_token;
      m.replacement = tok::mask;
    } else if (u < kMaskTokenShare + kRandomTokenShare) {
      m.action = MaskAction::random_token;
      // No regular tokens to draw from: the position stays as it is.
      m.replacement = vocab.regular_count() > 0
                          ? tok::reserved_count +
                                static_cast<int>(rng.below(static_cast<std::uint64_t>(vocab.regular_count())))
                          : original_ids[i];
    } else {
      m.action = MaskAction::keep;
      m.replacement = original_ids[i];
    }
    plan.text.push_back(m);
  }
  return plan;
}

MaskPlan plan_mrm_mask(int n_regions, std::uint64_t seed) {
  Rng rng(seed);
  MaskPlan plan;
  for (int i = 0; i < n_regions; ++i) {
    if (rng.uniform() < kMaskProbability) plan.regions.push_back(i);
  }
  return plan;
}

}  // namespace kmbart
