#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mdma/corpus.hpp"
#include "mdma/tokenizer.hpp"

namespace mdma {

enum class StrategyName { Plain, Erwt, ErwtSt, ErwtMask25, ErwtMask75, Pea, PeaSt, PeaTm };
enum class MetaField { Year, Politics, Location };

const char* to_string(StrategyName name);
const char* to_string(MetaField field);

/// One metadata-prepending configuration: which fields are rendered, whether
/// their values are registered special tokens, and the metadata mask rate.
struct Strategy {
    StrategyName name = StrategyName::Plain;
    bool uses_year = false;
    bool uses_politics = false;
    bool uses_location = false;
    bool special_tokens = false;
    double p_meta = 0.15;

    bool uses(MetaField field) const;

    static Strategy preset(StrategyName name);
    static Strategy from_name(const std::string& name);  // "erwt_mask_25" etc.
    static const std::vector<StrategyName>& all_names();
};

/// A segment with its rendered metadata prefix. meta_positions points at the
/// maskable value tokens only, never at delimiter tokens.
struct FormattedSegment {
    std::vector<TokenId> ids;
    std::vector<std::pair<int, MetaField>> meta_positions;
    int content_start = 0;

    // carried for evaluation bookkeeping
    std::string segment_id;
    int year = 0;
    Politics politics = Politics::None;
    std::string location;
    double ocr_quality = 0.0;

    int content_tokens() const { return static_cast<int>(ids.size()) - content_start; }
};

struct ParsedMeta {
    std::optional<int> year;
    std::optional<Politics> politics;
    std::optional<std::string> location;
};

std::string politics_abbrev(Politics politics);                    // liberal -> lib
std::string location_abbrev(const std::string& location);         // london -> lon
std::string location_from_abbrev(const std::string& abbrev);      // lon -> london; unknown stays

FormattedSegment format(const RawSegment& segment, const Strategy& strategy, const Vocab& vocab);

/// Recover the metadata values a format() call rendered. Errors if the prefix
/// shape does not match the strategy.
ParsedMeta parse(const FormattedSegment& formatted, const Strategy& strategy, const Vocab& vocab);

/// The prefix as text, e.g. "1861 [DATE]" (empty for plain).
std::string render_prefix(const Strategy& strategy, int year, Politics politics,
                          const std::string& location);

/// Vocabulary requirements implied by a set of strategies.
VocabBuildOptions vocab_needs(const std::vector<Strategy>& strategies, const DocumentSet& corpus);

/// build_vocab with the options a strategy set requires.
Vocab build_vocab(const DocumentSet& corpus, int max_size, const std::vector<Strategy>& strategies);

}  // namespace mdma
