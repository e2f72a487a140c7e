#include "mdma/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

#include <json.hpp>

#include "mdma/rng.hpp"
#include "mdma/tokenizer.hpp"

namespace mdma {

namespace {

std::string lower_ascii(const std::string& text) {
    std::string out = text;
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string join_tokens(const std::vector<std::string>& tokens, std::size_t begin, std::size_t end) {
    std::string out;
    for (std::size_t i = begin; i < end; ++i) {
        if (i > begin) {
            out += ' ';
        }
        out += tokens[i];
    }
    return out;
}

}  // namespace

const char* to_string(Politics politics) {
    switch (politics) {
        case Politics::Liberal: return "liberal";
        case Politics::Conservative: return "conservative";
        case Politics::Radical: return "radical";
        case Politics::Neutral: return "neutral";
        case Politics::None: return "none";
    }
    return "none";
}

std::optional<Politics> politics_from_string(const std::string& label) {
    const std::string l = lower_ascii(label);
    if (l == "liberal") return Politics::Liberal;
    if (l == "conservative") return Politics::Conservative;
    if (l == "radical") return Politics::Radical;
    if (l == "neutral") return Politics::Neutral;
    if (l == "none") return Politics::None;
    return std::nullopt;
}

const std::vector<std::string>& default_political_keywords() {
    static const std::vector<std::string> kKeywords = {
        "liberal", "liberals", "conservative", "conservatives", "tory", "tories"};
    return kKeywords;
}

DocumentSet ingest_lines(const std::vector<std::string>& lines, int year_min, int year_max) {
    DocumentSet set;
    set.year_min = year_min;
    set.year_max = year_max;
    set.docs.reserve(lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::size_t line_no = i + 1;
        const std::string& line = lines[i];
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        nlohmann::json record;
        try {
            record = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw std::runtime_error("corpus line " + std::to_string(line_no) +
                                     ": malformed record: " + e.what());
        }
        auto fail = [&](const std::string& what) -> std::runtime_error {
            return std::runtime_error("corpus line " + std::to_string(line_no) + ": " + what);
        };
        if (!record.is_object()) {
            throw fail("record is not an object");
        }
        for (const char* key : {"text", "year", "politics", "location", "ocr"}) {
            if (!record.contains(key)) {
                throw fail(std::string("missing required key '") + key + "'");
            }
        }
        Document doc;
        if (!record["text"].is_string() || !record["politics"].is_string() ||
            !record["location"].is_string() || !record["year"].is_number_integer() ||
            !record["ocr"].is_number()) {
            throw fail("field with wrong type");
        }
        doc.text = lower_ascii(record["text"].get<std::string>());
        doc.year = record["year"].get<int>();
        doc.location = lower_ascii(record["location"].get<std::string>());
        doc.ocr_quality = record["ocr"].get<double>();
        const std::string politics_label = record["politics"].get<std::string>();
        const auto politics = politics_from_string(politics_label);
        if (!politics) {
            throw fail("unknown politics label '" + politics_label + "'");
        }
        doc.politics = *politics;
        if (doc.ocr_quality < 0.0 || doc.ocr_quality > 1.0) {
            throw fail("ocr " + std::to_string(doc.ocr_quality) + " outside [0,1]");
        }
        if (doc.year < year_min || doc.year > year_max) {
            throw fail("year " + std::to_string(doc.year) + " outside corpus range [" +
                       std::to_string(year_min) + "," + std::to_string(year_max) + "]");
        }
        doc.id = record.contains("id") && record["id"].is_string()
                     ? record["id"].get<std::string>()
                     : "doc" + std::to_string(line_no);
        set.docs.push_back(std::move(doc));
    }
    return set;
}

DocumentSet ingest(const std::string& path, int year_min, int year_max) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open corpus file: " + path);
    }
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        lines.push_back(line);
    }
    return ingest_lines(lines, year_min, year_max);
}

void write_corpus(const DocumentSet& set, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    for (const Document& doc : set.docs) {
        nlohmann::json record;
        record["id"] = doc.id;
        record["text"] = doc.text;
        record["year"] = doc.year;
        record["politics"] = to_string(doc.politics);
        record["location"] = doc.location;
        record["ocr"] = doc.ocr_quality;
        out << record.dump() << '\n';
    }
}

std::vector<RawSegment> chunk(const Document& doc, int n, const Vocab& vocab) {
    if (n < 2) {
        throw std::invalid_argument("chunk length must be >= 2, got " + std::to_string(n));
    }
    const std::vector<std::string> words = tokenize_words(doc.text, &vocab);
    std::vector<RawSegment> segments;
    const std::size_t count = words.size() / static_cast<std::size_t>(n);
    segments.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        RawSegment seg;
        seg.doc_id = doc.id;
        seg.id = doc.id + "#" + std::to_string(w);
        seg.text = join_tokens(words, w * n, (w + 1) * n);
        seg.token_count = n;
        seg.year = doc.year;
        seg.politics = doc.politics;
        seg.location = doc.location;
        seg.ocr_quality = doc.ocr_quality;
        segments.push_back(std::move(seg));
    }
    return segments;
}

std::vector<RawSegment> chunk_all(const DocumentSet& set, int n, const Vocab& vocab) {
    std::vector<RawSegment> all;
    for (const Document& doc : set.docs) {
        auto segs = chunk(doc, n, vocab);
        all.insert(all.end(), std::make_move_iterator(segs.begin()),
                   std::make_move_iterator(segs.end()));
    }
    return all;
}

DocumentSet downsample(const DocumentSet& set, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw std::invalid_argument("downsample fraction must lie in (0,1], got " +
                                    std::to_string(fraction));
    }
    DocumentSet out;
    out.year_min = set.year_min;
    out.year_max = set.year_max;
    for (std::size_t i = 0; i < set.docs.size(); ++i) {
        Rng rng(derive_seed(seed, i));
        if (rng.uniform01() < fraction) {
            out.docs.push_back(set.docs[i]);
        }
    }
    return out;
}

SegmentSplit split(const std::vector<RawSegment>& segments, SplitCounts counts,
                   std::uint64_t seed, const std::vector<bool>& exclude) {
    if (!exclude.empty() && exclude.size() != segments.size()) {
        throw std::invalid_argument("exclude mask size does not match segment count");
    }
    std::vector<std::size_t> pool;
    pool.reserve(segments.size());
    for (std::size_t i = 0; i < segments.size(); ++i) {
        if (exclude.empty() || !exclude[i]) {
            pool.push_back(i);
        }
    }
    const long long need = static_cast<long long>(counts.train) + counts.validation + counts.test;
    if (counts.train < 0 || counts.validation < 0 || counts.test < 0) {
        throw std::invalid_argument("split counts must be non-negative");
    }
    if (need > static_cast<long long>(pool.size())) {
        throw std::runtime_error("split needs " + std::to_string(need) + " segments but only " +
                                 std::to_string(pool.size()) + " are available");
    }
    Rng rng(seed);
    rng.shuffle(pool);
    SegmentSplit out;
    std::size_t cursor = 0;
    auto take = [&](int count, std::vector<RawSegment>& dest) {
        dest.reserve(count);
        for (int i = 0; i < count; ++i) {
            dest.push_back(segments[pool[cursor++]]);
        }
    };
    take(counts.train, out.train);
    take(counts.validation, out.validation);
    take(counts.test, out.test);
    return out;
}

std::string scrub_years(const std::string& text) {
    static const std::regex kYearPattern("[789][0-9]{2}");
    return std::regex_replace(text, kYearPattern, " ");
}

std::vector<RawSegment> sample(const std::vector<RawSegment>& segments, const SampleSpec& spec) {
    if (spec.size < 1) {
        throw std::invalid_argument("sample size must be >= 1");
    }
    if (spec.kind == SampleKind::Keyword && spec.keywords.empty()) {
        throw std::invalid_argument("keyword sample requires a non-empty keyword list");
    }

    std::vector<std::size_t> qualifying;
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const RawSegment& seg = segments[i];
        bool keep = false;
        switch (spec.kind) {
            case SampleKind::Random:
                keep = true;
                break;
            case SampleKind::Keyword: {
                std::istringstream words(seg.text);
                std::string word;
                while (!keep && words >> word) {
                    for (const std::string& kw : spec.keywords) {
                        if (word == kw) {
                            keep = true;
                            break;
                        }
                    }
                }
                break;
            }
            case SampleKind::BadOcrPreCutoff:
                keep = seg.year < spec.year_cutoff && seg.ocr_quality < spec.ocr_threshold;
                break;
        }
        if (keep) {
            qualifying.push_back(i);
        }
    }

    if (qualifying.size() < static_cast<std::size_t>(spec.size)) {
        throw std::runtime_error("sample shortfall: requested " + std::to_string(spec.size) +
                                 " segments, only " + std::to_string(qualifying.size()) +
                                 " qualify");
    }

    Rng rng(spec.seed);
    rng.shuffle(qualifying);
    qualifying.resize(spec.size);
    std::sort(qualifying.begin(), qualifying.end());  // stable output order

    std::vector<RawSegment> out;
    out.reserve(qualifying.size());
    for (std::size_t idx : qualifying) {
        RawSegment seg = segments[idx];
        if (spec.scrub_years) {
            seg.text = scrub_years(seg.text);
        }
        out.push_back(std::move(seg));
    }
    return out;
}

SynthSpec SynthSpec::standard(int year_min, int year_max, int markers_per_decade,
                              int markers_per_politics, int background_vocab, double marker_rate,
                              int doc_count, int doc_length) {
    SynthSpec spec;
    spec.year_min = year_min;
    spec.year_max = year_max;
    spec.background_vocab = background_vocab;
    spec.marker_rate = marker_rate;
    spec.doc_count = doc_count;
    spec.doc_length = doc_length;
    const int decades = spec.decade_count();
    for (int d = 0; d < decades; ++d) {
        std::vector<std::string> markers;
        for (int j = 0; j < markers_per_decade; ++j) {
            markers.push_back(std::string("mk") + static_cast<char>('a' + d) +
                              static_cast<char>('a' + j));
        }
        spec.decade_markers.push_back(std::move(markers));
    }
    for (int p = 0; p < kPoliticsCount; ++p) {
        std::vector<std::string> markers;
        for (int j = 0; j < markers_per_politics; ++j) {
            markers.push_back(std::string("pk") + static_cast<char>('a' + p) +
                              static_cast<char>('a' + j));
        }
        spec.politics_markers.push_back(std::move(markers));
    }
    return spec;
}

DocumentSet synthesize(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.doc_count < 0 || spec.doc_length < 1 || spec.background_vocab < 1) {
        throw std::invalid_argument("synthesize: invalid corpus dimensions");
    }
    if (!(spec.marker_rate >= 0.0 && spec.marker_rate <= 0.5)) {
        throw std::invalid_argument("synthesize: marker rate must lie in [0, 0.5]");
    }
    const int decades = spec.decade_count();
    if (static_cast<int>(spec.decade_markers.size()) != decades ||
        static_cast<int>(spec.politics_markers.size()) != kPoliticsCount) {
        throw std::invalid_argument("synthesize: marker sets do not cover the label space");
    }
    if (spec.marker_rate > 0.0) {
        for (const auto& set : spec.decade_markers) {
            if (set.empty()) {
                throw std::invalid_argument("synthesize: empty decade marker set");
            }
        }
        for (const auto& set : spec.politics_markers) {
            if (set.empty()) {
                throw std::invalid_argument("synthesize: empty politics marker set");
            }
        }
    }
    if (spec.locations.empty()) {
        throw std::invalid_argument("synthesize: need at least one location");
    }

    std::vector<std::string> background;
    background.reserve(spec.background_vocab);
    for (int i = 0; i < spec.background_vocab; ++i) {
        background.push_back(std::string("w") + static_cast<char>('a' + (i / 26) % 26) +
                             static_cast<char>('a' + i % 26) +
                             (i >= 26 * 26 ? std::string(1, static_cast<char>('a' + i / (26 * 26)))
                                           : std::string()));
    }

    DocumentSet set;
    set.year_min = spec.year_min;
    set.year_max = spec.year_max;
    set.docs.reserve(spec.doc_count);
    const int year_span = spec.year_max - spec.year_min + 1;
    for (int d = 0; d < spec.doc_count; ++d) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(d)));
        Document doc;
        doc.id = "synth" + std::to_string(d);
        doc.year = spec.year_min + static_cast<int>(rng.uniform_int(year_span));
        doc.politics = static_cast<Politics>(rng.uniform_int(kPoliticsCount));
        doc.location = spec.locations[rng.uniform_int(spec.locations.size())];
        doc.ocr_quality = rng.uniform01();
        const int decade_index = doc.year / 10 - spec.year_min / 10;
        const auto& dm = spec.decade_markers[decade_index];
        const auto& pm = spec.politics_markers[static_cast<int>(doc.politics)];
        std::string text;
        for (int t = 0; t < spec.doc_length; ++t) {
            if (t > 0) {
                text += ' ';
            }
            const double u = rng.uniform01();
            if (u < spec.marker_rate) {
                text += dm[rng.uniform_int(dm.size())];
            } else if (u < 2.0 * spec.marker_rate) {
                text += pm[rng.uniform_int(pm.size())];
            } else {
                text += background[rng.uniform_int(background.size())];
            }
        }
        doc.text = std::move(text);
        set.docs.push_back(std::move(doc));
    }
    return set;
}

}  // namespace mdma
