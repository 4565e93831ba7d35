#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kmbart/vocab.hpp"

namespace kmbart {

inline constexpr double kMaskProbability = 0.15;
inline constexpr double kMaskTokenShare = 0.8;
inline constexpr double kRandomTokenShare = 0.1;

enum class MaskAction : std::uint8_t { mask_token, random_token, keep };

struct TextMask {
  int position = 0;
  MaskAction action = MaskAction::mask_token;
  int replacement = 0;  // id the encoder sees at this position

  bool operator==(const TextMask&) const = default;
};

struct MaskPlan {
  std::vector<TextMask> text;
  std::vector<int> regions;

  bool operator==(const MaskPlan&) const = default;
};

// Each eligible position is selected with p = 0.15; a selected position is
// replaced by <mask> (0.8), a uniformly drawn regular token (0.1), or kept
// (0.1). original_ids[i] is the token currently at positions[i]; the caller
// excludes reserved tokens. Deterministic in seed.
MaskPlan plan_mlm_mask(std::span<const int> positions, std::span<const int> original_ids,
                       const Vocabulary& vocab, std::uint64_t seed);

// Each of n_regions is selected with p = 0.15. Deterministic in seed.
MaskPlan plan_mrm_mask(int n_regions, std::uint64_t seed);

}  // namespace kmbart
