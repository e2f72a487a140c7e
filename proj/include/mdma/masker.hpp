#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "mdma/templater.hpp"

namespace mdma {

inline constexpr TokenId kIgnoreLabel = -1;

/// Positions chosen for corruption, what stood there, what was written in,
/// and the full-length label row (kIgnoreLabel off the chosen positions).
struct MaskPlan {
    std::vector<int> positions;  // sorted ascending
    std::vector<TokenId> originals;
    std::vector<TokenId> replacements;
    std::vector<TokenId> labels;
};

/// Select content positions at p_text with 80/10/10 mask/random/keep
/// corruption and metadata value positions at p_meta with 100% [MASK].
/// Delimiter tokens are never selected. Deterministic given seed.
MaskPlan plan_masks(const FormattedSegment& formatted, double p_text, double p_meta,
                    std::uint64_t seed, const Vocab& vocab);

struct MaskedPair {
    std::vector<TokenId> input_ids;
    std::vector<TokenId> labels;
};

MaskedPair apply_masks(const FormattedSegment& formatted, const MaskPlan& plan);

}  // namespace mdma
