#include "mdma/templater.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

namespace mdma {

namespace {

struct PrefixToken {
    std::string text;
    std::optional<MetaField> field;  // set only for maskable value tokens
};

int require_year(const RawSegment& segment) {
    if (segment.year <= 0) {
        throw std::runtime_error("format: segment '" + segment.id + "' is missing field year");
    }
    return segment.year;
}

std::string require_location(const RawSegment& segment) {
    if (segment.location.empty()) {
        throw std::runtime_error("format: segment '" + segment.id + "' is missing field location");
    }
    return segment.location;
}

std::vector<PrefixToken> prefix_tokens(const Strategy& strategy, int year, Politics politics,
                                       const std::string& location) {
    std::vector<PrefixToken> prefix;
    switch (strategy.name) {
        case StrategyName::Plain:
            break;
        case StrategyName::Erwt:
        case StrategyName::ErwtMask25:
        case StrategyName::ErwtMask75:
            prefix.push_back({std::to_string(year), MetaField::Year});
            prefix.push_back({tokens::kDate, std::nullopt});
            break;
        case StrategyName::ErwtSt:
            prefix.push_back({"[" + std::to_string(year) + "]", MetaField::Year});
            prefix.push_back({tokens::kSep, std::nullopt});
            break;
        case StrategyName::Pea:
            prefix.push_back({to_string(politics), MetaField::Politics});
            prefix.push_back({tokens::kPol, std::nullopt});
            break;
        case StrategyName::PeaSt:
            prefix.push_back({"[" + politics_abbrev(politics) + "]", MetaField::Politics});
            prefix.push_back({tokens::kPol, std::nullopt});
            break;
        case StrategyName::PeaTm:
            prefix.push_back({std::to_string(year), MetaField::Year});
            prefix.push_back({tokens::kYear, std::nullopt});
            prefix.push_back({politics_abbrev(politics), MetaField::Politics});
            prefix.push_back({tokens::kPoliticsDelim, std::nullopt});
            prefix.push_back({location_abbrev(location), MetaField::Location});
            prefix.push_back({tokens::kLocation, std::nullopt});
            break;
    }
    return prefix;
}

}  // namespace

const char* to_string(StrategyName name) {
    switch (name) {
        case StrategyName::Plain: return "plain";
        case StrategyName::Erwt: return "erwt";
        case StrategyName::ErwtSt: return "erwt_st";
        case StrategyName::ErwtMask25: return "erwt_mask_25";
        case StrategyName::ErwtMask75: return "erwt_mask_75";
        case StrategyName::Pea: return "pea";
        case StrategyName::PeaSt: return "pea_st";
        case StrategyName::PeaTm: return "pea_tm";
    }
    return "plain";
}

const char* to_string(MetaField field) {
    switch (field) {
        case MetaField::Year: return "year";
        case MetaField::Politics: return "politics";
        case MetaField::Location: return "location";
    }
    return "year";
}

bool Strategy::uses(MetaField field) const {
    switch (field) {
        case MetaField::Year: return uses_year;
        case MetaField::Politics: return uses_politics;
        case MetaField::Location: return uses_location;
    }
    return false;
}

Strategy Strategy::preset(StrategyName name) {
    Strategy s;
    s.name = name;
    switch (name) {
        case StrategyName::Plain:
            break;
        case StrategyName::Erwt:
            s.uses_year = true;
            break;
        case StrategyName::ErwtSt:
            s.uses_year = true;
            s.special_tokens = true;
            break;
        case StrategyName::ErwtMask25:
            s.uses_year = true;
            s.p_meta = 0.25;
            break;
        case StrategyName::ErwtMask75:
            s.uses_year = true;
            s.p_meta = 0.75;
            break;
        case StrategyName::Pea:
            s.uses_politics = true;
            break;
        case StrategyName::PeaSt:
            s.uses_politics = true;
            s.special_tokens = true;
            break;
        case StrategyName::PeaTm:
            s.uses_year = true;
            s.uses_politics = true;
            s.uses_location = true;
            s.p_meta = 0.25;
            break;
    }
    return s;
}

const std::vector<StrategyName>& Strategy::all_names() {
    static const std::vector<StrategyName> kAll = {
        StrategyName::Plain,      StrategyName::Erwt,       StrategyName::ErwtSt,
        StrategyName::ErwtMask25, StrategyName::ErwtMask75, StrategyName::Pea,
        StrategyName::PeaSt,      StrategyName::PeaTm};
    return kAll;
}

Strategy Strategy::from_name(const std::string& name) {
    for (StrategyName candidate : all_names()) {
        if (name == to_string(candidate)) {
            return preset(candidate);
        }
    }
    throw std::invalid_argument("unknown strategy: '" + name + "'");
}

std::string politics_abbrev(Politics politics) {
    switch (politics) {
        case Politics::Liberal: return "lib";
        case Politics::Conservative: return "con";
        case Politics::Radical: return "rad";
        case Politics::Neutral: return "neu";
        case Politics::None: return "non";
    }
    return "non";
}

std::string location_abbrev(const std::string& location) {
    if (location == "london") return "lon";
    if (location == "liverpool") return "liv";
    return location.substr(0, 3);
}

std::string location_from_abbrev(const std::string& abbrev) {
    if (abbrev == "lon") return "london";
    if (abbrev == "liv") return "liverpool";
    return abbrev;
}

FormattedSegment format(const RawSegment& segment, const Strategy& strategy, const Vocab& vocab) {
    const int year = strategy.uses_year ? require_year(segment) : 0;
    const std::string location = strategy.uses_location ? require_location(segment) : std::string();

    FormattedSegment out;
    out.segment_id = segment.id;
    out.year = segment.year;
    out.politics = segment.politics;
    out.location = segment.location;
    out.ocr_quality = segment.ocr_quality;

    const auto prefix = prefix_tokens(strategy, year, segment.politics, location);
    out.ids.reserve(prefix.size() + segment.token_count);
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        const auto found = vocab.find(prefix[i].text);
        if (!found) {
            throw std::runtime_error("format: vocabulary does not contain metadata token '" +
                                     prefix[i].text + "' required by strategy " +
                                     to_string(strategy.name));
        }
        out.ids.push_back(*found);
        if (prefix[i].field) {
            out.meta_positions.emplace_back(static_cast<int>(i), *prefix[i].field);
        }
    }
    out.content_start = static_cast<int>(out.ids.size());
    const std::vector<TokenId> content = encode(segment.text, vocab);
    out.ids.insert(out.ids.end(), content.begin(), content.end());
    return out;
}

ParsedMeta parse(const FormattedSegment& formatted, const Strategy& strategy, const Vocab& vocab) {
    const auto shape_error = [&](const std::string& what) -> std::runtime_error {
        return std::runtime_error("parse: prefix inconsistent with strategy " +
                                  std::string(to_string(strategy.name)) + ": " + what);
    };

    // expected prefix shape: value/delimiter token kinds per strategy
    std::vector<PrefixToken> expected;
    switch (strategy.name) {
        case StrategyName::Plain:
            expected = {};
            break;
        case StrategyName::Erwt:
        case StrategyName::ErwtMask25:
        case StrategyName::ErwtMask75:
            expected = {{"", MetaField::Year}, {tokens::kDate, std::nullopt}};
            break;
        case StrategyName::ErwtSt:
            expected = {{"", MetaField::Year}, {tokens::kSep, std::nullopt}};
            break;
        case StrategyName::Pea:
        case StrategyName::PeaSt:
            expected = {{"", MetaField::Politics}, {tokens::kPol, std::nullopt}};
            break;
        case StrategyName::PeaTm:
            expected = {{"", MetaField::Year},     {tokens::kYear, std::nullopt},
                        {"", MetaField::Politics}, {tokens::kPoliticsDelim, std::nullopt},
                        {"", MetaField::Location}, {tokens::kLocation, std::nullopt}};
            break;
    }

    if (formatted.content_start != static_cast<int>(expected.size())) {
        throw shape_error("prefix length " + std::to_string(formatted.content_start) +
                          ", expected " + std::to_string(expected.size()));
    }
    if (static_cast<int>(formatted.ids.size()) < formatted.content_start) {
        throw shape_error("segment shorter than its prefix");
    }

    ParsedMeta meta;
    for (std::size_t i = 0; i < expected.size(); ++i) {
        const std::string& token = vocab.token(formatted.ids[i]);
        if (!expected[i].field) {
            if (token != expected[i].text) {
                throw shape_error("delimiter position " + std::to_string(i) + " holds '" + token +
                                  "', expected '" + expected[i].text + "'");
            }
            continue;
        }
        switch (*expected[i].field) {
            case MetaField::Year: {
                std::string digits = token;
                if (strategy.special_tokens || strategy.name == StrategyName::ErwtSt) {
                    if (digits.size() < 3 || digits.front() != '[' || digits.back() != ']') {
                        throw shape_error("year token '" + token + "' is not bracketed");
                    }
                    digits = digits.substr(1, digits.size() - 2);
                }
                if (digits.empty() ||
                    !std::all_of(digits.begin(), digits.end(),
                                 [](unsigned char c) { return std::isdigit(c) != 0; })) {
                    throw shape_error("year token '" + token + "' is not numeric");
                }
                meta.year = std::stoi(digits);
                break;
            }
            case MetaField::Politics: {
                std::string label = token;
                if (strategy.name == StrategyName::PeaSt) {
                    if (label.size() < 3 || label.front() != '[' || label.back() != ']') {
                        throw shape_error("politics token '" + token + "' is not bracketed");
                    }
                    label = label.substr(1, label.size() - 2);
                }
                std::optional<Politics> politics;
                if (strategy.name == StrategyName::Pea) {
                    politics = politics_from_string(label);
                } else {
                    for (int p = 0; p < kPoliticsCount; ++p) {
                        if (politics_abbrev(static_cast<Politics>(p)) == label) {
                            politics = static_cast<Politics>(p);
                        }
                    }
                }
                if (!politics) {
                    throw shape_error("unknown politics token '" + token + "'");
                }
                meta.politics = politics;
                break;
            }
            case MetaField::Location:
                meta.location = location_from_abbrev(token);
                break;
        }
    }
    return meta;
}

std::string render_prefix(const Strategy& strategy, int year, Politics politics,
                          const std::string& location) {
    const auto prefix = prefix_tokens(strategy, year, politics, location);
    std::string out;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (i > 0) {
            out += ' ';
        }
        out += prefix[i].text;
    }
    return out;
}

VocabBuildOptions vocab_needs(const std::vector<Strategy>& strategies, const DocumentSet& corpus) {
    VocabBuildOptions options;
    std::set<std::string> extras;
    for (const Strategy& strategy : strategies) {
        if (strategy.special_tokens && strategy.uses_year) {
            options.special_year_tokens = true;
        }
        if (strategy.special_tokens && strategy.uses_politics) {
            options.special_politics_tokens = true;
        }
        if (strategy.uses_politics && !strategy.special_tokens) {
            for (int p = 0; p < kPoliticsCount; ++p) {
                extras.insert(to_string(static_cast<Politics>(p)));
                extras.insert(politics_abbrev(static_cast<Politics>(p)));
            }
        }
        if (strategy.uses_location) {
            extras.insert("lon");
            extras.insert("liv");
            for (const Document& doc : corpus.docs) {
                if (!doc.location.empty()) {
                    extras.insert(location_abbrev(doc.location));
                }
            }
        }
    }
    options.extra_tokens.assign(extras.begin(), extras.end());
    return options;
}

Vocab build_vocab(const DocumentSet& corpus, int max_size, const std::vector<Strategy>& strategies) {
    return build_vocab(corpus, max_size, vocab_needs(strategies, corpus));
}

}  // namespace mdma
