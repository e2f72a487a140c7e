#include <doctest.h>

#include <stdexcept>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "mdma/corpus.hpp"
#include "mdma/rng.hpp"
#include "mdma/templater.hpp"
#include "mdma/tokenizer.hpp"

using namespace mdma;

namespace {

DocumentSet corpus_of(const std::string& text) {
    DocumentSet set;
    Document doc;
    doc.id = "d";
    doc.text = text;
    doc.year = 1850;
    set.docs.push_back(doc);
    return set;
}

}  // namespace

TEST_CASE("frequency ordering with lexicographic ties") {
    const Vocab vocab = build_vocab(corpus_of("a a b"), 200, VocabBuildOptions{});
    REQUIRE(vocab.find("a"));
    REQUIRE(vocab.find("b"));
    CHECK(*vocab.find("a") < *vocab.find("b"));

    // ties: both once, lexicographic
    const Vocab tied = build_vocab(corpus_of("zz yy"), 200, VocabBuildOptions{});
    CHECK(*tied.find("yy") < *tied.find("zz"));
}

TEST_CASE("special year tokens appear when a special strategy needs them") {
    const DocumentSet corpus = corpus_of("some text");
    const Vocab vocab = build_vocab(corpus, 400, {Strategy::preset(StrategyName::ErwtSt)});
    int count = 0;
    for (int y = 1800; y <= 1880; ++y) {
        const auto id = vocab.find("[" + std::to_string(y) + "]");
        REQUIRE(id);
        CHECK(vocab.is_special(*id));
        ++count;
    }
    CHECK(count == 81);
    CHECK(vocab.has_special_year_tokens());
}

TEST_CASE("normal-token strategies keep years as single normal tokens") {
    const Vocab vocab = build_vocab(corpus_of("some text"), 400,
                                    {Strategy::preset(StrategyName::Erwt)});
    const auto id = vocab.find("1861");
    REQUIRE(id);
    CHECK_FALSE(vocab.is_special(*id));
    CHECK_FALSE(vocab.has_special_year_tokens());
    // the whole metadata range never tokenizes to [UNK]
    for (int y = 1800; y <= 1880; ++y) {
        const auto ids = encode(std::to_string(y), vocab);
        REQUIRE(ids.size() == 1);
        CHECK(ids[0] != vocab.unk_id());
    }
}

TEST_CASE("vocabulary capacity must hold the mandatory tokens") {
    CHECK_THROWS_AS(build_vocab(corpus_of("a"), 20, VocabBuildOptions{}), std::invalid_argument);
}

TEST_CASE("encode maps words, unknown words, and literal specials") {
    const Vocab vocab = build_vocab(corpus_of("a b the queen"), 300, VocabBuildOptions{});
    CHECK(decode(encode("a b", vocab), vocab) == "a b");
    CHECK(encode("zzzunseen", vocab) == std::vector<TokenId>{vocab.unk_id()});
    const auto ids = encode("1861 [DATE] a", vocab);
    REQUIRE(ids.size() == 3);
    CHECK(ids[0] == *vocab.find("1861"));
    CHECK(ids[1] == vocab.id("[DATE]"));
    CHECK(ids[2] == *vocab.find("a"));
}

TEST_CASE("lower-cased bracket words do not alias special tokens") {
    const Vocab vocab = build_vocab(corpus_of("plain text"), 300, VocabBuildOptions{});
    const auto ids = encode("[mask]", vocab);  // not the literal special "[MASK]"
    CHECK(ids.size() == 3);                    // '[', 'mask', ']'
}

TEST_CASE("decode round trips and rejects bad ids") {
    const Vocab vocab = build_vocab(corpus_of("the queen spoke"), 300, VocabBuildOptions{});
    CHECK(decode(encode("the queen", vocab), vocab) == "the queen");
    CHECK(decode({vocab.mask_id()}, vocab) == "[MASK]");
    CHECK_THROWS_AS(decode({static_cast<TokenId>(vocab.size())}, vocab), std::out_of_range);
    CHECK_THROWS_AS(decode({-1}, vocab), std::out_of_range);
}

TEST_CASE("ids are a bijection and specials are disjoint from normals") {
    const Vocab vocab = build_vocab(corpus_of("a b c d"), 300,
                                    {Strategy::preset(StrategyName::PeaSt)});
    std::set<std::string> seen;
    for (TokenId id = 0; id < vocab.size(); ++id) {
        const std::string& token = vocab.token(id);
        CHECK(seen.insert(token).second);
        CHECK(vocab.id(token) == id);
    }
    for (TokenId id : vocab.normal_ids()) {
        CHECK_FALSE(vocab.is_special(id));
    }
}

TEST_CASE("encode/decode round trip holds over random id sequences") {
    const Vocab vocab = build_vocab(corpus_of("alpha beta gamma delta epsilon"), 300,
                                    {Strategy::preset(StrategyName::PeaTm)});
    Rng rng(31);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<TokenId> ids;
        const int len = 1 + static_cast<int>(rng.uniform_int(12));
        for (int i = 0; i < len; ++i) {
            ids.push_back(static_cast<TokenId>(rng.uniform_int(vocab.size())));
        }
        CHECK(encode(decode(ids, vocab), vocab) == ids);
    }
}

TEST_CASE("vocabulary file reloads bit-exactly") {
    const Vocab vocab = build_vocab(corpus_of("alpha beta gamma"), 300,
                                    {Strategy::preset(StrategyName::ErwtSt)});
    const std::string path = "/tmp/mdma_test_vocab.txt";
    vocab.save(path);
    const Vocab loaded = Vocab::load(path);
    REQUIRE(loaded.size() == vocab.size());
    for (TokenId id = 0; id < vocab.size(); ++id) {
        CHECK(loaded.token(id) == vocab.token(id));
        CHECK(loaded.is_special(id) == vocab.is_special(id));
    }
    CHECK(loaded.has_special_year_tokens() == vocab.has_special_year_tokens());
}
