#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <regex>
#include <set>
#include <sstream>

#include "mdma/corpus.hpp"
#include "mdma/rng.hpp"
#include "mdma/templater.hpp"
#include "mdma/tokenizer.hpp"

using namespace mdma;

namespace {

std::string record_line(const std::string& text, int year, const std::string& politics,
                        const std::string& location, double ocr) {
    std::ostringstream out;
    out << "{\"text\": \"" << text << "\", \"year\": " << year << ", \"politics\": \"" << politics
        << "\", \"location\": \"" << location << "\", \"ocr\": " << ocr << "}";
    return out.str();
}

DocumentSet tiny_corpus() {
    return ingest_lines({record_line("The Queen spoke in Parliament today", 1861, "liberal",
                                     "london", 0.9)});
}

}  // namespace

TEST_CASE("ingest lower-cases text and passes fields through") {
    const DocumentSet set = tiny_corpus();
    REQUIRE(set.docs.size() == 1);
    CHECK(set.docs[0].text == "the queen spoke in parliament today");
    CHECK(set.docs[0].year == 1861);
    CHECK(set.docs[0].politics == Politics::Liberal);
    CHECK(set.docs[0].location == "london");
    CHECK(set.docs[0].ocr_quality == doctest::Approx(0.9));
}

TEST_CASE("ingest rejects out-of-range ocr") {
    CHECK_THROWS_WITH_AS(ingest_lines({record_line("a", 1861, "liberal", "london", 1.3)}),
                         doctest::Contains("ocr"), std::runtime_error);
}

TEST_CASE("ingest fails fast at the offending line") {
    const std::vector<std::string> lines = {
        record_line("a", 1861, "liberal", "london", 0.9),
        "{ not json",
        record_line("b", 1862, "radical", "london", 0.8),
    };
    CHECK_THROWS_WITH_AS(ingest_lines(lines), doctest::Contains("line 2"), std::runtime_error);
}

TEST_CASE("ingest rejects unknown politics labels by name") {
    CHECK_THROWS_WITH_AS(ingest_lines({record_line("a", 1861, "whig", "london", 0.9)}),
                         doctest::Contains("whig"), std::runtime_error);
}

TEST_CASE("ingest is idempotent under re-ingest of its own output") {
    const DocumentSet once = tiny_corpus();
    DocumentSet set = once;
    write_corpus(set, "/tmp/mdma_test_roundtrip.ndjson");
    const DocumentSet twice = ingest("/tmp/mdma_test_roundtrip.ndjson");
    REQUIRE(twice.docs.size() == once.docs.size());
    CHECK(twice.docs[0].text == once.docs[0].text);
}

TEST_CASE("chunk produces exact windows and drops the remainder") {
    const DocumentSet corpus = tiny_corpus();
    const Vocab vocab = build_vocab(corpus, 200, VocabBuildOptions{});
    auto doc_with_tokens = [&](int count) {
        Document doc;
        doc.id = "d";
        doc.year = 1850;
        std::ostringstream text;
        for (int i = 0; i < count; ++i) {
            text << (i ? " " : "") << "tok" << i;
        }
        doc.text = text.str();
        return doc;
    };
    CHECK(chunk(doc_with_tokens(250), 100, vocab).size() == 2);
    CHECK(chunk(doc_with_tokens(100), 100, vocab).size() == 1);
    CHECK(chunk(doc_with_tokens(99), 100, vocab).empty());

    const auto segments = chunk(doc_with_tokens(250), 100, vocab);
    for (const RawSegment& seg : segments) {
        CHECK(seg.token_count == 100);
        CHECK(tokenize_words(seg.text, &vocab).size() == 100);
        CHECK(seg.year == 1850);
    }
    // concatenated chunk streams reproduce a prefix of the document stream
    const auto full = tokenize_words(doc_with_tokens(250).text, &vocab);
    std::vector<std::string> joined;
    for (const RawSegment& seg : segments) {
        const auto toks = tokenize_words(seg.text, &vocab);
        joined.insert(joined.end(), toks.begin(), toks.end());
    }
    CHECK(std::equal(joined.begin(), joined.end(), full.begin()));
}

TEST_CASE("chunk rejects n < 2") {
    const DocumentSet corpus = tiny_corpus();
    const Vocab vocab = build_vocab(corpus, 200, VocabBuildOptions{});
    CHECK_THROWS_AS(chunk(corpus.docs[0], 1, vocab), std::invalid_argument);
}

TEST_CASE("downsample keeps everything at fraction 1 and is deterministic") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 2, 2, 50, 0.1, 2000, 5);
    const DocumentSet set = synthesize(spec, 3);
    CHECK(downsample(set, 1.0, 9).docs.size() == set.docs.size());
    const DocumentSet a = downsample(set, 0.25, 9);
    const DocumentSet b = downsample(set, 0.25, 9);
    REQUIRE(a.docs.size() == b.docs.size());
    for (std::size_t i = 0; i < a.docs.size(); ++i) {
        CHECK(a.docs[i].id == b.docs[i].id);
    }
    CHECK_THROWS_AS(downsample(set, 0.0, 1), std::invalid_argument);
    CHECK_THROWS_AS(downsample(set, 1.5, 1), std::invalid_argument);
}

TEST_CASE("downsample kept count lands within the 3-sigma binomial bound") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 2, 2, 50, 0.0, 100000, 2);
    const DocumentSet set = synthesize(spec, 17);
    const double n = 100000.0, p = 0.25;
    const double sigma = std::sqrt(n * p * (1.0 - p));
    const double kept = static_cast<double>(downsample(set, p, 123).docs.size());
    CHECK(std::abs(kept - n * p) <= 3.0 * sigma);
}

TEST_CASE("split produces exact, disjoint, seeded parts") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 2, 2, 50, 0.1, 400, 64);
    const DocumentSet corpus = synthesize(spec, 5);
    const Vocab vocab = build_vocab(corpus, 400, VocabBuildOptions{});
    const auto segments = chunk_all(corpus, 32, vocab);  // 2 segments per doc
    REQUIRE(segments.size() == 800);

    const SegmentSplit parts = split(segments, {500, 100, 200}, 77);
    CHECK(parts.train.size() == 500);
    CHECK(parts.validation.size() == 100);
    CHECK(parts.test.size() == 200);
    std::set<std::string> ids;
    for (const auto* list : {&parts.train, &parts.validation, &parts.test}) {
        for (const RawSegment& seg : *list) {
            ids.insert(seg.id);
        }
    }
    CHECK(ids.size() == 800);

    const SegmentSplit again = split(segments, {500, 100, 200}, 77);
    CHECK(again.train.front().id == parts.train.front().id);
    CHECK(again.test.back().id == parts.test.back().id);

    // single-element split
    const SegmentSplit one = split({segments[0]}, {1, 0, 0}, 1);
    CHECK(one.train.size() == 1);

    CHECK_THROWS_WITH_AS(split(segments, {700, 100, 200}, 1), doctest::Contains("800"),
                         std::runtime_error);
}

TEST_CASE("split honors the exclusion mask") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 2, 2, 50, 0.1, 100, 32);
    const DocumentSet corpus = synthesize(spec, 6);
    const Vocab vocab = build_vocab(corpus, 400, VocabBuildOptions{});
    const auto segments = chunk_all(corpus, 32, vocab);
    std::vector<bool> exclude(segments.size(), false);
    std::set<std::string> excluded_ids;
    for (std::size_t i = 0; i < segments.size(); i += 2) {
        exclude[i] = true;
        excluded_ids.insert(segments[i].id);
    }
    const SegmentSplit parts = split(segments, {30, 10, 10}, 3, exclude);
    for (const auto* list : {&parts.train, &parts.validation, &parts.test}) {
        for (const RawSegment& seg : *list) {
            CHECK(excluded_ids.count(seg.id) == 0);
        }
    }
}

TEST_CASE("scrub_years matches the reference engine outputs") {
    // frozen from Python re.sub(r'[789][0-9]{2}', ' ', ...)
    CHECK(scrub_years("the year 1854") == "the year 1 ");
    CHECK(scrub_years("abc") == "abc");
    CHECK(scrub_years("799 800 900") == "     ");
    CHECK(scrub_years("1879 and 1880") == "1  and 1 ");
    CHECK(scrub_years("17999") == "1 9");
    CHECK(scrub_years("x700y") == "x y");
}

TEST_CASE("scrub_years output never matches the pattern") {
    const std::regex pattern("[789][0-9]{2}");
    Rng rng(2024);
    const std::string alphabet = "0123456789 ab";
    for (int trial = 0; trial < 10000; ++trial) {
        std::string s;
        const int len = 1 + static_cast<int>(rng.uniform_int(12));
        for (int i = 0; i < len; ++i) {
            s += alphabet[rng.uniform_int(alphabet.size())];
        }
        const std::string scrubbed = scrub_years(s);
        CHECK_FALSE(std::regex_search(scrubbed, pattern));
    }
}

TEST_CASE("keyword sampling matches whole tokens only") {
    RawSegment a;
    a.id = "a";
    a.text = "a liberal view";
    a.token_count = 3;
    RawSegment b = a;
    b.id = "b";
    b.text = "market prices";
    RawSegment c = a;
    c.id = "c";
    c.text = "the conservatory hall";  // must not match "conservative"

    SampleSpec spec;
    spec.kind = SampleKind::Keyword;
    spec.keywords = default_political_keywords();
    spec.size = 1;
    const auto chosen = sample({a, b, c}, spec);
    REQUIRE(chosen.size() == 1);
    CHECK(chosen[0].id == "a");
}

TEST_CASE("bad-ocr sampling keeps only early low-quality segments") {
    auto seg = [](const char* id, int year, double ocr) {
        RawSegment s;
        s.id = id;
        s.year = year;
        s.ocr_quality = ocr;
        s.text = "x";
        s.token_count = 1;
        return s;
    };
    SampleSpec spec;
    spec.kind = SampleKind::BadOcrPreCutoff;
    spec.year_cutoff = 1830;
    spec.ocr_threshold = 0.5;
    spec.size = 1;
    const auto chosen =
        sample({seg("a", 1825, 0.4), seg("b", 1825, 0.6), seg("c", 1850, 0.4)}, spec);
    REQUIRE(chosen.size() == 1);
    CHECK(chosen[0].id == "a");
}

TEST_CASE("sampling reports shortfalls") {
    RawSegment s;
    s.id = "only";
    s.text = "x";
    SampleSpec spec;
    spec.size = 10;
    CHECK_THROWS_WITH_AS(sample({s, s, s, s, s}, spec), doctest::Contains("5"),
                         std::runtime_error);
}

TEST_CASE("sampling can scrub years after selection") {
    RawSegment s;
    s.id = "a";
    s.text = "built in 1855";
    SampleSpec spec;
    spec.size = 1;
    spec.scrub_years = true;
    const auto chosen = sample({s}, spec);
    CHECK(chosen[0].text == "built in 1 ");
}

TEST_CASE("synthesize with zero marker rate plants nothing") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 4, 4, 100, 0.0, 200, 50);
    const DocumentSet set = synthesize(spec, 21);
    std::set<std::string> markers;
    for (const auto& group : spec.decade_markers) {
        markers.insert(group.begin(), group.end());
    }
    for (const auto& group : spec.politics_markers) {
        markers.insert(group.begin(), group.end());
    }
    for (const Document& doc : set.docs) {
        std::istringstream words(doc.text);
        std::string word;
        while (words >> word) {
            CHECK(markers.count(word) == 0);
        }
    }
}

TEST_CASE("synthesize plants own-decade markers at the configured rate") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 4, 4, 300, 0.1, 1000, 100);
    const DocumentSet set = synthesize(spec, 22);
    REQUIRE(set.docs.size() == 1000);
    long long marker_tokens = 0;
    long long total_tokens = 0;
    for (const Document& doc : set.docs) {
        const int decade_index = doc.year / 10 - 180;
        const auto& own = spec.decade_markers[decade_index];
        std::istringstream words(doc.text);
        std::string word;
        while (words >> word) {
            ++total_tokens;
            if (std::find(own.begin(), own.end(), word) != own.end()) {
                ++marker_tokens;
            }
        }
    }
    const double rate = static_cast<double>(marker_tokens) / static_cast<double>(total_tokens);
    CHECK(rate > 0.08);
    CHECK(rate < 0.12);
}

TEST_CASE("synthesize is byte-identical for equal seeds") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 2, 2, 80, 0.1, 100, 30);
    const DocumentSet a = synthesize(spec, 99);
    const DocumentSet b = synthesize(spec, 99);
    REQUIRE(a.docs.size() == b.docs.size());
    for (std::size_t i = 0; i < a.docs.size(); ++i) {
        CHECK(a.docs[i].text == b.docs[i].text);
        CHECK(a.docs[i].year == b.docs[i].year);
        CHECK(a.docs[i].politics == b.docs[i].politics);
    }
}

TEST_CASE("synthesize validates marker sets") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 2, 2, 80, 0.1, 10, 30);
    spec.decade_markers[3].clear();
    CHECK_THROWS_AS(synthesize(spec, 1), std::invalid_argument);
}
