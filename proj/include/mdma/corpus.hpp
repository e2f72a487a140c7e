#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mdma {

class Vocab;

enum class Politics { Liberal, Conservative, Radical, Neutral, None };

inline constexpr int kPoliticsCount = 5;

const char* to_string(Politics politics);
std::optional<Politics> politics_from_string(const std::string& label);

/// One source text with its catalogue metadata.
struct Document {
    std::string id;
    std::string text;  // lower-cased on ingest
    int year = 0;
    Politics politics = Politics::None;
    std::string location;
    double ocr_quality = 0.0;
};

struct DocumentSet {
    std::vector<Document> docs;
    int year_min = 1800;
    int year_max = 1880;
};

/// A fixed-length window of tokenizer tokens with the document metadata copied on.
struct RawSegment {
    std::string id;  // "<doc_id>#<window index>"
    std::string doc_id;
    std::string text;  // lower-cased tokens joined by single spaces
    int token_count = 0;
    int year = 0;
    Politics politics = Politics::None;
    std::string location;
    double ocr_quality = 0.0;
};

enum class SampleKind { Random, Keyword, BadOcrPreCutoff };

struct SampleSpec {
    SampleKind kind = SampleKind::Random;
    int size = 1;
    std::vector<std::string> keywords;
    int year_cutoff = 1830;
    double ocr_threshold = 0.5;
    bool scrub_years = false;
    std::uint64_t seed = 0;
};

/// liberal(s), conservative(s), tory/ies.
const std::vector<std::string>& default_political_keywords();

/// Parameters for the planted-signal corpus generator. Marker tokens are whole
/// words tied to a decade or a politics label; everything else is background.
struct SynthSpec {
    int year_min = 1800;
    int year_max = 1879;
    std::vector<std::vector<std::string>> decade_markers;    // one set per decade, ascending
    std::vector<std::vector<std::string>> politics_markers;  // one set per Politics value
    int background_vocab = 300;
    double marker_rate = 0.1;  // per-position rate for decade markers; politics markers use the same rate
    int doc_count = 1000;
    int doc_length = 100;
    std::vector<std::string> locations = {"london", "liverpool"};

    int decade_count() const { return (year_max / 10) - (year_min / 10) + 1; }

    /// Digit-free generated marker names ("mkaa", "pkba", ...) plus background
    /// words ("waa"...). Digit-free so year scrubbing cannot touch the signal.
    static SynthSpec standard(int year_min, int year_max, int markers_per_decade,
                              int markers_per_politics, int background_vocab, double marker_rate,
                              int doc_count, int doc_length);
};

/// Parse newline-delimited JSON records {text, year, politics, location, ocr[, id]}.
/// Text is lower-cased on ingest. Fails fast with the offending line number.
DocumentSet ingest(const std::string& path, int year_min = 1800, int year_max = 1880);
DocumentSet ingest_lines(const std::vector<std::string>& lines, int year_min = 1800,
                         int year_max = 1880);
void write_corpus(const DocumentSet& set, const std::string& path);

/// Consecutive non-overlapping windows of exactly n tokenizer tokens. The
/// trailing remainder shorter than n is dropped.
std::vector<RawSegment> chunk(const Document& doc, int n, const Vocab& vocab);
std::vector<RawSegment> chunk_all(const DocumentSet& set, int n, const Vocab& vocab);

/// Keep each document independently with probability `fraction`.
DocumentSet downsample(const DocumentSet& set, double fraction, std::uint64_t seed);

struct SplitCounts {
    int train = 0;
    int validation = 0;
    int test = 0;
};

struct SegmentSplit {
    std::vector<RawSegment> train;
    std::vector<RawSegment> validation;
    std::vector<RawSegment> test;
};

/// Disjoint seeded split with exact sizes. Segments flagged in `exclude`
/// (e.g. the LM pre-training pool) are not eligible for any part.
SegmentSplit split(const std::vector<RawSegment>& segments, SplitCounts counts,
                   std::uint64_t seed, const std::vector<bool>& exclude = {});

/// Replace every match of [789][0-9]{2} with a single space.
std::string scrub_years(const std::string& text);

std::vector<RawSegment> sample(const std::vector<RawSegment>& segments, const SampleSpec& spec);

DocumentSet synthesize(const SynthSpec& spec, std::uint64_t seed);

}  // namespace mdma
