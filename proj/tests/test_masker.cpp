#include <doctest.h>

#include <stdexcept>

#include <array>

#include "mdma/corpus.hpp"
#include "mdma/masker.hpp"
#include "mdma/rng.hpp"
#include "mdma/templater.hpp"
#include "mdma/tokenizer.hpp"

using namespace mdma;

namespace {

struct Fixture {
    DocumentSet corpus;
    Vocab vocab;
    RawSegment segment;

    Fixture()
        : corpus(make_corpus()),
          vocab(build_vocab(corpus, 500,
                            std::vector<Strategy>{Strategy::preset(StrategyName::Erwt),
                                                  Strategy::preset(StrategyName::PeaTm)})) {
        segment.id = "s";
        segment.text = "the queen spoke in parliament about the harvest";
        segment.token_count = 8;
        segment.year = 1861;
        segment.politics = Politics::Liberal;
        segment.location = "london";
    }

    static DocumentSet make_corpus() {
        DocumentSet set;
        Document doc;
        doc.id = "d";
        doc.text = "the queen spoke in parliament about the harvest";
        doc.year = 1861;
        set.docs.push_back(doc);
        return set;
    }
};

}  // namespace

TEST_CASE("zero rates produce an empty plan") {
    Fixture fx;
    const FormattedSegment f = format(fx.segment, Strategy::preset(StrategyName::Erwt), fx.vocab);
    const MaskPlan plan = plan_masks(f, 0.0, 0.0, 7, fx.vocab);
    CHECK(plan.positions.empty());
    for (TokenId label : plan.labels) {
        CHECK(label == kIgnoreLabel);
    }
    const MaskedPair pair = apply_masks(f, plan);
    CHECK(pair.input_ids == f.ids);
}

TEST_CASE("p_meta of one forces exactly the metadata value position") {
    Fixture fx;
    const FormattedSegment f = format(fx.segment, Strategy::preset(StrategyName::Erwt), fx.vocab);
    const MaskPlan plan = plan_masks(f, 0.0, 1.0, 7, fx.vocab);
    REQUIRE(plan.positions.size() == 1);
    CHECK(plan.positions[0] == 0);
    CHECK(plan.replacements[0] == fx.vocab.mask_id());
    CHECK(plan.labels[0] == fx.vocab.id("1861"));
    const MaskedPair pair = apply_masks(f, plan);
    CHECK(pair.input_ids[0] == fx.vocab.mask_id());
    CHECK(pair.input_ids[1] == fx.vocab.id("[DATE]"));  // delimiter untouched
}

TEST_CASE("masking the first position keeps the label and flips the input") {
    Fixture fx;
    const FormattedSegment f = format(fx.segment, Strategy::preset(StrategyName::Erwt), fx.vocab);
    MaskPlan plan;
    plan.positions = {0};
    plan.originals = {f.ids[0]};
    plan.replacements = {fx.vocab.mask_id()};
    plan.labels.assign(f.ids.size(), kIgnoreLabel);
    plan.labels[0] = f.ids[0];
    const auto [input, labels] = apply_masks(f, plan);
    CHECK(input[0] == fx.vocab.mask_id());
    CHECK(labels[0] == fx.vocab.id("1861"));
    CHECK(input[1] == f.ids[1]);
}

TEST_CASE("apply rejects mismatched plan lengths") {
    Fixture fx;
    const FormattedSegment f = format(fx.segment, Strategy::preset(StrategyName::Erwt), fx.vocab);
    MaskPlan plan;
    plan.labels.assign(f.ids.size() + 3, kIgnoreLabel);
    CHECK_THROWS_AS(apply_masks(f, plan), std::invalid_argument);
}

TEST_CASE("delimiters are never selected and content selection spares the prefix") {
    Fixture fx;
    const FormattedSegment f =
        format(fx.segment, Strategy::preset(StrategyName::PeaTm), fx.vocab);
    // positions 1/3/5 are [Y]/[P]/[L]; 0/2/4 are values
    for (int trial = 0; trial < 200; ++trial) {
        const MaskPlan plan = plan_masks(f, 1.0, 1.0, 1000 + trial, fx.vocab);
        for (int pos : plan.positions) {
            CHECK(pos != 1);
            CHECK(pos != 3);
            CHECK(pos != 5);
        }
    }
}

TEST_CASE("identical seeds give identical plans") {
    Fixture fx;
    const FormattedSegment f = format(fx.segment, Strategy::preset(StrategyName::Erwt), fx.vocab);
    const MaskPlan a = plan_masks(f, 0.15, 0.25, 99, fx.vocab);
    const MaskPlan b = plan_masks(f, 0.15, 0.25, 99, fx.vocab);
    CHECK(a.positions == b.positions);
    CHECK(a.replacements == b.replacements);
    CHECK(a.labels == b.labels);
}

TEST_CASE("unmasked positions are bit-identical to the formatted input") {
    Fixture fx;
    const FormattedSegment f = format(fx.segment, Strategy::preset(StrategyName::Erwt), fx.vocab);
    for (int trial = 0; trial < 100; ++trial) {
        const MaskPlan plan = plan_masks(f, 0.3, 0.5, 500 + trial, fx.vocab);
        const MaskedPair pair = apply_masks(f, plan);
        std::size_t cursor = 0;
        for (std::size_t pos = 0; pos < f.ids.size(); ++pos) {
            if (cursor < plan.positions.size() &&
                plan.positions[cursor] == static_cast<int>(pos)) {
                ++cursor;
                continue;
            }
            CHECK(pair.input_ids[pos] == f.ids[pos]);
            CHECK(pair.labels[pos] == kIgnoreLabel);
        }
    }
}

TEST_CASE("selection rates and corruption branches converge") {
    Fixture fx;
    const FormattedSegment f =
        format(fx.segment, Strategy::preset(StrategyName::ErwtMask25), fx.vocab);
    const int trials = 100000;
    long long meta_selected = 0;
    long long content_selected = 0;
    long long masked = 0, randomized = 0, kept = 0;
    for (int trial = 0; trial < trials; ++trial) {
        const MaskPlan plan = plan_masks(f, 0.15, 0.25, derive_seed(4242, trial), fx.vocab);
        for (std::size_t i = 0; i < plan.positions.size(); ++i) {
            const int pos = plan.positions[i];
            if (pos < f.content_start) {
                ++meta_selected;
                CHECK(plan.replacements[i] == fx.vocab.mask_id());
            } else {
                ++content_selected;
                if (plan.replacements[i] == fx.vocab.mask_id()) {
                    ++masked;
                } else if (plan.replacements[i] == plan.originals[i]) {
                    ++kept;
                } else {
                    ++randomized;
                    CHECK_FALSE(fx.vocab.is_special(plan.replacements[i]));
                }
            }
        }
    }
    const double meta_rate = static_cast<double>(meta_selected) / trials;  // one slot per trial
    const double content_rate =
        static_cast<double>(content_selected) / (static_cast<double>(trials) * 8);
    CHECK(meta_rate > 0.23);
    CHECK(meta_rate < 0.27);
    CHECK(content_rate > 0.14);
    CHECK(content_rate < 0.16);
    const double total = static_cast<double>(content_selected);
    CHECK(masked / total > 0.78);
    CHECK(masked / total < 0.82);
    CHECK(randomized / total > 0.08);
    CHECK(randomized / total < 0.12);
    CHECK(kept / total > 0.08);
    CHECK(kept / total < 0.12);
}

TEST_CASE("mask probabilities outside [0,1] are rejected") {
    Fixture fx;
    const FormattedSegment f = format(fx.segment, Strategy::preset(StrategyName::Erwt), fx.vocab);
    CHECK_THROWS_AS(plan_masks(f, -0.1, 0.15, 1, fx.vocab), std::invalid_argument);
    CHECK_THROWS_AS(plan_masks(f, 0.15, 1.5, 1, fx.vocab), std::invalid_argument);
}
