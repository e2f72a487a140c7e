#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mdma/corpus.hpp"

namespace mdma {

using TokenId = std::int32_t;

namespace tokens {
inline constexpr const char* kMask = "[MASK]";
inline constexpr const char* kSep = "[SEP]";
inline constexpr const char* kCls = "[CLS]";
inline constexpr const char* kUnk = "[UNK]";
inline constexpr const char* kPad = "[PAD]";
inline constexpr const char* kDate = "[DATE]";
inline constexpr const char* kPol = "[POL]";
inline constexpr const char* kYear = "[Y]";
inline constexpr const char* kPoliticsDelim = "[P]";
inline constexpr const char* kLocation = "[L]";
}  // namespace tokens

/// Immutable word-level vocabulary. Ids are dense; specials come first.
class Vocab {
public:
    static const std::vector<std::string>& core_special_tokens();

    int size() const { return static_cast<int>(id_to_token_.size()); }

    std::optional<TokenId> find(const std::string& token) const;
    TokenId id(const std::string& token) const;  // throws if absent
    TokenId id_or_unk(const std::string& token) const;
    const std::string& token(TokenId id) const;  // throws on out-of-range id
    bool is_special(TokenId id) const;

    TokenId mask_id() const { return id(tokens::kMask); }
    TokenId sep_id() const { return id(tokens::kSep); }
    TokenId cls_id() const { return id(tokens::kCls); }
    TokenId unk_id() const { return id(tokens::kUnk); }
    TokenId pad_id() const { return id(tokens::kPad); }

    /// Ids of non-special entries, ascending (random-replacement pool).
    const std::vector<TokenId>& normal_ids() const { return normal_ids_; }

    bool has_special_year_tokens() const { return has_special_years_; }

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

    /// Append a token; returns its id. Duplicate tokens are rejected.
    TokenId add(const std::string& token, bool special);

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, TokenId> token_to_id_;
    std::vector<bool> special_;
    std::vector<TokenId> normal_ids_;
    bool has_special_years_ = false;

    friend struct VocabBuilderAccess;
};

struct VocabBuildOptions {
    bool special_year_tokens = false;      // [1800] ... [1880]
    bool special_politics_tokens = false;  // [lib] [con] [rad] [neu] [non]
    std::vector<std::string> extra_tokens;  // mandatory normal entries (politics words, abbreviations)
};

/// Specials, the year strings of the corpus range, mandatory extras, then the
/// most frequent corpus words (ties broken lexicographically) up to max_size.
Vocab build_vocab(const DocumentSet& corpus, int max_size, const VocabBuildOptions& options = {});

/// Split into word-level tokens: whitespace-delimited chunks equal to a
/// registered special token stay whole; everything else is lower-cased and
/// split into alphanumeric runs and single punctuation marks.
std::vector<std::string> tokenize_words(const std::string& text, const Vocab* vocab = nullptr);

std::vector<TokenId> encode(const std::string& text, const Vocab& vocab);
std::string decode(const std::vector<TokenId>& ids, const Vocab& vocab);

}  // namespace mdma
