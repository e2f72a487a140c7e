#include <doctest.h>


#include <stdexcept>
#include <set>

#include "mdma/corpus.hpp"
#include "mdma/masker.hpp"
#include "mdma/rng.hpp"
#include "mdma/templater.hpp"
#include "mdma/tokenizer.hpp"

using namespace mdma;

namespace {

DocumentSet small_corpus() {
    DocumentSet set;
    Document doc;
    doc.id = "d";
    doc.text = "the queen spoke in parliament about the harvest";
    doc.year = 1861;
    doc.politics = Politics::Liberal;
    doc.location = "london";
    set.docs.push_back(doc);
    return set;
}

std::vector<Strategy> all_strategies() {
    std::vector<Strategy> out;
    for (StrategyName name : Strategy::all_names()) {
        out.push_back(Strategy::preset(name));
    }
    return out;
}

RawSegment segment_with(int year, Politics politics, const std::string& location) {
    RawSegment seg;
    seg.id = "s";
    seg.text = "the queen spoke";
    seg.token_count = 3;
    seg.year = year;
    seg.politics = politics;
    seg.location = location;
    return seg;
}

}  // namespace

TEST_CASE("the eight presets carry their table configuration") {
    const Strategy plain = Strategy::preset(StrategyName::Plain);
    CHECK_FALSE(plain.uses_year);
    CHECK_FALSE(plain.uses_politics);
    CHECK(plain.p_meta == doctest::Approx(0.15));

    const Strategy erwt25 = Strategy::preset(StrategyName::ErwtMask25);
    CHECK(erwt25.uses_year);
    CHECK_FALSE(erwt25.special_tokens);
    CHECK(erwt25.p_meta == doctest::Approx(0.25));

    const Strategy erwt75 = Strategy::preset(StrategyName::ErwtMask75);
    CHECK(erwt75.p_meta == doctest::Approx(0.75));

    const Strategy st = Strategy::preset(StrategyName::ErwtSt);
    CHECK(st.special_tokens);
    CHECK(st.p_meta == doctest::Approx(0.15));

    const Strategy pea_tm = Strategy::preset(StrategyName::PeaTm);
    CHECK(pea_tm.uses_year);
    CHECK(pea_tm.uses_politics);
    CHECK(pea_tm.uses_location);
    CHECK_FALSE(pea_tm.special_tokens);
    CHECK(pea_tm.p_meta == doctest::Approx(0.25));

    CHECK(Strategy::from_name("erwt_mask_25").name == StrategyName::ErwtMask25);
    CHECK_THROWS_AS(Strategy::from_name("nope"), std::invalid_argument);
}

TEST_CASE("rendered prefixes match the catalogue examples exactly") {
    CHECK(render_prefix(Strategy::preset(StrategyName::Erwt), 1861, Politics::Liberal, "london") ==
          "1861 [DATE]");
    CHECK(render_prefix(Strategy::preset(StrategyName::ErwtSt), 1861, Politics::Liberal,
                        "london") == "[1861] [SEP]");
    CHECK(render_prefix(Strategy::preset(StrategyName::Pea), 1861, Politics::Liberal, "london") ==
          "liberal [POL]");
    CHECK(render_prefix(Strategy::preset(StrategyName::PeaSt), 1861, Politics::Liberal,
                        "london") == "[lib] [POL]");
    CHECK(render_prefix(Strategy::preset(StrategyName::PeaTm), 1861, Politics::Liberal,
                        "london") == "1861 [Y] lib [P] lon [L]");
    CHECK(render_prefix(Strategy::preset(StrategyName::Plain), 1861, Politics::Liberal,
                        "london") == "");
}

TEST_CASE("format prepends the prefix and leaves content untouched") {
    const DocumentSet corpus = small_corpus();
    const Vocab vocab = build_vocab(corpus, 400, all_strategies());
    const RawSegment seg = segment_with(1861, Politics::Liberal, "london");
    const std::vector<TokenId> content = encode(seg.text, vocab);

    for (const Strategy& strategy : all_strategies()) {
        const FormattedSegment formatted = format(seg, strategy, vocab);
        REQUIRE(formatted.content_tokens() == static_cast<int>(content.size()));
        for (std::size_t i = 0; i < content.size(); ++i) {
            CHECK(formatted.ids[formatted.content_start + i] == content[i]);
        }
        for (const auto& [pos, field] : formatted.meta_positions) {
            CHECK(pos < formatted.content_start);
            CHECK(strategy.uses(field));
        }
    }

    const FormattedSegment erwt = format(seg, Strategy::preset(StrategyName::Erwt), vocab);
    CHECK(decode({erwt.ids.begin(), erwt.ids.begin() + erwt.content_start}, vocab) ==
          "1861 [DATE]");
    CHECK(erwt.meta_positions.size() == 1);
    CHECK(erwt.meta_positions[0].first == 0);

    const FormattedSegment plain = format(seg, Strategy::preset(StrategyName::Plain), vocab);
    CHECK(plain.content_start == 0);
    CHECK(plain.meta_positions.empty());
    CHECK(plain.ids == content);
}

TEST_CASE("politics none is rendered as a class, not absence") {
    const DocumentSet corpus = small_corpus();
    const Vocab vocab = build_vocab(corpus, 400, all_strategies());
    const RawSegment seg = segment_with(1861, Politics::None, "london");
    const FormattedSegment pea = format(seg, Strategy::preset(StrategyName::Pea), vocab);
    CHECK(vocab.token(pea.ids[0]) == "none");
    const FormattedSegment pea_st = format(seg, Strategy::preset(StrategyName::PeaSt), vocab);
    CHECK(vocab.token(pea_st.ids[0]) == "[non]");
}

TEST_CASE("format errors name the missing field") {
    const DocumentSet corpus = small_corpus();
    const Vocab vocab = build_vocab(corpus, 400, all_strategies());
    RawSegment seg = segment_with(0, Politics::Liberal, "london");  // missing year
    CHECK_THROWS_WITH_AS(format(seg, Strategy::preset(StrategyName::Erwt), vocab),
                         doctest::Contains("year"), std::runtime_error);
    RawSegment no_loc = segment_with(1861, Politics::Liberal, "");
    CHECK_THROWS_WITH_AS(format(no_loc, Strategy::preset(StrategyName::PeaTm), vocab),
                         doctest::Contains("location"), std::runtime_error);
}

TEST_CASE("parse recovers the formatted metadata") {
    const DocumentSet corpus = small_corpus();
    const Vocab vocab = build_vocab(corpus, 400, all_strategies());
    const RawSegment seg = segment_with(1861, Politics::Liberal, "london");

    const auto erwt = parse(format(seg, Strategy::preset(StrategyName::Erwt), vocab),
                            Strategy::preset(StrategyName::Erwt), vocab);
    CHECK(erwt.year == 1861);
    CHECK_FALSE(erwt.politics.has_value());

    const auto tm = parse(format(seg, Strategy::preset(StrategyName::PeaTm), vocab),
                          Strategy::preset(StrategyName::PeaTm), vocab);
    CHECK(tm.year == 1861);
    CHECK(tm.politics == Politics::Liberal);
    CHECK(tm.location == std::string("london"));

    // plain segment parsed under erwt is a shape error
    const FormattedSegment plain = format(seg, Strategy::preset(StrategyName::Plain), vocab);
    CHECK_THROWS_AS(parse(plain, Strategy::preset(StrategyName::Erwt), vocab),
                    std::runtime_error);
}

TEST_CASE("parse-format identity holds across the strategy and metadata space") {
    const DocumentSet corpus = small_corpus();
    const Vocab vocab = build_vocab(corpus, 500, all_strategies());
    Rng rng(1234);
    const std::vector<std::string> locations = {"london", "liverpool"};
    int cases = 0;
    for (int trial = 0; trial < 125; ++trial) {
        for (const Strategy& strategy : all_strategies()) {
            RawSegment seg = segment_with(
                1800 + static_cast<int>(rng.uniform_int(81)),
                static_cast<Politics>(rng.uniform_int(kPoliticsCount)),
                locations[rng.uniform_int(locations.size())]);
            const FormattedSegment formatted = format(seg, strategy, vocab);
            const ParsedMeta meta = parse(formatted, strategy, vocab);
            if (strategy.uses_year) {
                CHECK(meta.year == seg.year);
            }
            if (strategy.uses_politics) {
                CHECK(meta.politics == seg.politics);
            }
            if (strategy.uses_location) {
                CHECK(meta.location == seg.location);
            }
            ++cases;
        }
    }
    CHECK(cases == 1000);
}

TEST_CASE("maskable metadata tokens are special exactly under special strategies") {
    const DocumentSet corpus = small_corpus();
    const Vocab vocab = build_vocab(corpus, 500, all_strategies());
    const RawSegment seg = segment_with(1861, Politics::Radical, "liverpool");
    for (const Strategy& strategy : all_strategies()) {
        const FormattedSegment formatted = format(seg, strategy, vocab);
        for (const auto& [pos, field] : formatted.meta_positions) {
            (void)field;
            CHECK(vocab.is_special(formatted.ids[pos]) == strategy.special_tokens);
        }
    }
}

TEST_CASE("unknown locations abbreviate to their first three letters") {
    CHECK(location_abbrev("london") == "lon");
    CHECK(location_abbrev("liverpool") == "liv");
    CHECK(location_abbrev("manchester") == "man");
    CHECK(location_from_abbrev("lon") == "london");
    CHECK(location_from_abbrev("man") == "man");  // unknown stays abbreviated
}
