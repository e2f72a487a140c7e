#include "mdma/masker.hpp"

#include <stdexcept>

#include "mdma/rng.hpp"

namespace mdma {

MaskPlan plan_masks(const FormattedSegment& formatted, double p_text, double p_meta,
                    std::uint64_t seed, const Vocab& vocab) {
    if (!(p_text >= 0.0 && p_text <= 1.0) || !(p_meta >= 0.0 && p_meta <= 1.0)) {
        throw std::invalid_argument("mask probabilities must lie in [0,1]");
    }
    const int length = static_cast<int>(formatted.ids.size());
    std::vector<bool> is_meta_value(formatted.content_start, false);
    for (const auto& [pos, field] : formatted.meta_positions) {
        (void)field;
        is_meta_value[pos] = true;
    }

    Rng rng(seed);
    MaskPlan plan;
    plan.labels.assign(length, kIgnoreLabel);
    const TokenId mask_id = vocab.mask_id();
    const auto& normal_ids = vocab.normal_ids();

    for (int pos = 0; pos < length; ++pos) {
        const bool in_prefix = pos < formatted.content_start;
        if (in_prefix && !is_meta_value[pos]) {
            continue;  // delimiters are never selected
        }
        const double p = in_prefix ? p_meta : p_text;
        if (!rng.bernoulli(p)) {
            continue;
        }
        const TokenId original = formatted.ids[pos];
        TokenId replacement;
        if (in_prefix) {
            replacement = mask_id;  // metadata is always hidden outright
        } else {
            const double u = rng.uniform01();
            if (u < 0.8) {
                replacement = mask_id;
            } else if (u < 0.9) {
                replacement = normal_ids[rng.uniform_int(normal_ids.size())];
            } else {
                replacement = original;
            }
        }
        plan.positions.push_back(pos);
        plan.originals.push_back(original);
        plan.replacements.push_back(replacement);
        plan.labels[pos] = original;
    }
    return plan;
}

MaskedPair apply_masks(const FormattedSegment& formatted, const MaskPlan& plan) {
    if (plan.labels.size() != formatted.ids.size()) {
        throw std::invalid_argument("mask plan length " + std::to_string(plan.labels.size()) +
                                    " does not match segment length " +
                                    std::to_string(formatted.ids.size()));
    }
    MaskedPair pair;
    pair.input_ids = formatted.ids;
    pair.labels = plan.labels;
    for (std::size_t i = 0; i < plan.positions.size(); ++i) {
        pair.input_ids[plan.positions[i]] = plan.replacements[i];
    }
    return pair;
}

}  // namespace mdma
