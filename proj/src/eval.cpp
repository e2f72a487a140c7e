#include "mdma/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mdma/rng.hpp"

namespace mdma {

namespace {

constexpr int kPllBatch = 64;

std::string format_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, ',')) {
        fields.push_back(field);
    }
    if (!line.empty() && line.back() == ',') {
        fields.emplace_back();
    }
    return fields;
}

}  // namespace

double pll(const Model& model, const FormattedSegment& formatted, TokenId mask_id) {
    const int length = static_cast<int>(formatted.ids.size());
    const int n = formatted.content_tokens();
    if (n <= 0) {
        throw std::invalid_argument("pll: segment has no content tokens");
    }
    double total = 0.0;
    for (int start = formatted.content_start; start < length; start += kPllBatch) {
        const int b = std::min(kPllBatch, length - start);
        Batch batch;
        batch.batch = b;
        batch.seq_len = length;
        batch.ids.resize(static_cast<std::size_t>(b) * length);
        for (int i = 0; i < b; ++i) {
            TokenId* row = batch.ids.data() + static_cast<std::size_t>(i) * length;
            std::copy(formatted.ids.begin(), formatted.ids.end(), row);
            row[start + i] = mask_id;
        }
        const LogProbs lp = model.forward(batch);
        for (int i = 0; i < b; ++i) {
            total += lp.at(i, start + i, formatted.ids[start + i]);
        }
    }
    return total;
}

double pp(const Model& model, const FormattedSegment& formatted, TokenId mask_id) {
    const double score = pll(model, formatted, mask_id);
    return std::exp(-score / formatted.content_tokens());
}

PpEval eval_pp(const Model& model, const std::vector<RawSegment>& segments,
               const Strategy& strategy, const Vocab& vocab, const std::string& model_name) {
    if (segments.empty()) {
        throw std::invalid_argument("eval_pp: no segments");
    }
    const int n = segments.front().token_count;
    for (const RawSegment& segment : segments) {
        if (segment.token_count != n) {
            throw std::invalid_argument("eval_pp: mixed segment lengths (" + std::to_string(n) +
                                        " vs " + std::to_string(segment.token_count) + ")");
        }
    }

    PpEval out;
    out.records.reserve(segments.size());
    const TokenId mask_id = vocab.mask_id();
    for (const RawSegment& segment : segments) {
        FormattedSegment formatted;
        if (strategy.name == StrategyName::Plain) {
            // plain models are scored under the "<year> [SEP]" evaluation prefix
            formatted.segment_id = segment.id;
            formatted.year = segment.year;
            formatted.politics = segment.politics;
            formatted.location = segment.location;
            formatted.ocr_quality = segment.ocr_quality;
            const auto year_id = vocab.find(std::to_string(segment.year));
            if (!year_id) {
                throw std::runtime_error("eval_pp: year token '" + std::to_string(segment.year) +
                                         "' missing from vocabulary");
            }
            formatted.ids.push_back(*year_id);
            formatted.ids.push_back(vocab.sep_id());
            formatted.meta_positions.emplace_back(0, MetaField::Year);
            formatted.content_start = 2;
            const std::vector<TokenId> content = encode(segment.text, vocab);
            formatted.ids.insert(formatted.ids.end(), content.begin(), content.end());
        } else {
            formatted = format(segment, strategy, vocab);
        }
        EvalRecord record;
        record.segment_id = segment.id;
        record.pp = pp(model, formatted, mask_id);
        record.n = formatted.content_tokens();
        record.ocr = segment.ocr_quality;
        record.year = segment.year;
        record.decade = segment.year / 10 * 10;
        record.politics = segment.politics;
        record.model_name = model_name;
        record.strategy = to_string(strategy.name);
        out.records.push_back(std::move(record));
    }

    std::vector<double> values;
    values.reserve(out.records.size());
    for (const EvalRecord& record : out.records) {
        values.push_back(record.pp);
    }
    std::tie(out.mean, out.sd) = mean_and_population_sd(values);
    return out;
}

std::pair<double, double> mean_and_population_sd(const std::vector<double>& values) {
    if (values.empty()) {
        throw std::invalid_argument("mean_and_population_sd: empty input");
    }
    double sum = 0.0;
    for (double v : values) {
        sum += v;
    }
    const double mean = sum / static_cast<double>(values.size());
    double sq = 0.0;
    for (double v : values) {
        sq += (v - mean) * (v - mean);
    }
    return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

void write_eval_records_csv(const std::vector<EvalRecord>& records, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open for writing: " + path);
    }
    out << "segment_id,pp,n,ocr,year,decade,politics,model_name,strategy\n";
    for (const EvalRecord& r : records) {
        out << r.segment_id << ',' << format_double(r.pp) << ',' << r.n << ','
            << format_double(r.ocr) << ',' << r.year << ',' << r.decade << ','
            << to_string(r.politics) << ',' << r.model_name << ',' << r.strategy << '\n';
    }
}

std::vector<EvalRecord> read_eval_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open eval records file: " + path);
    }
    std::string line;
    if (!std::getline(in, line) ||
        line != "segment_id,pp,n,ocr,year,decade,politics,model_name,strategy") {
        throw std::runtime_error("eval records file " + path + ": unexpected header");
    }
    std::vector<EvalRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto fields = split_csv_line(line);
        if (fields.size() != 9) {
            throw std::runtime_error("eval records file " + path + " line " +
                                     std::to_string(line_no) + ": expected 9 fields");
        }
        EvalRecord r;
        r.segment_id = fields[0];
        r.pp = std::stod(fields[1]);
        r.n = std::stoi(fields[2]);
        r.ocr = std::stod(fields[3]);
        r.year = std::stoi(fields[4]);
        r.decade = std::stoi(fields[5]);
        const auto politics = politics_from_string(fields[6]);
        if (!politics) {
            throw std::runtime_error("eval records file " + path + " line " +
                                     std::to_string(line_no) + ": unknown politics label");
        }
        r.politics = *politics;
        r.model_name = fields[7];
        r.strategy = fields[8];
        records.push_back(std::move(r));
    }
    return records;
}

std::optional<int> year_from_token(const std::string& token) {
    std::string digits = token;
    if (digits.size() >= 3 && digits.front() == '[' && digits.back() == ']') {
        digits = digits.substr(1, digits.size() - 2);
    }
    if (digits.empty() || digits.size() > 4 ||
        !std::all_of(digits.begin(), digits.end(),
                     [](unsigned char c) { return std::isdigit(c) != 0; })) {
        return std::nullopt;
    }
    return std::stoi(digits);
}

std::optional<Politics> politics_from_token(const std::string& token) {
    std::string label = token;
    if (label.size() >= 3 && label.front() == '[' && label.back() == ']') {
        label = label.substr(1, label.size() - 2);
    }
    if (const auto full = politics_from_string(label)) {
        return full;
    }
    for (int p = 0; p < kPoliticsCount; ++p) {
        if (politics_abbrev(static_cast<Politics>(p)) == label) {
            return static_cast<Politics>(p);
        }
    }
    return std::nullopt;
}

MetadataPrediction predict_metadata(const Model& model, const FormattedSegment& formatted,
                                    MetaField field, bool restrict_support, const Strategy& strategy,
                                    const Vocab& vocab, int year_min, int year_max) {
    int position = -1;
    for (const auto& [pos, f] : formatted.meta_positions) {
        if (f == field) {
            position = pos;
            break;
        }
    }
    if (position < 0) {
        throw std::invalid_argument(std::string("predict_metadata: field '") + to_string(field) +
                                    "' absent from strategy " + to_string(strategy.name));
    }

    std::vector<TokenId> ids = formatted.ids;
    ids[position] = vocab.mask_id();
    const std::vector<double> dist = model.token_distribution(ids, position);

    std::vector<TokenId> support;
    if (restrict_support) {
        auto push_if_present = [&](const std::string& token) {
            if (const auto id = vocab.find(token)) {
                support.push_back(*id);
            }
        };
        if (field == MetaField::Year) {
            for (int y = year_min; y <= year_max; ++y) {
                push_if_present(strategy.special_tokens ? "[" + std::to_string(y) + "]"
                                                        : std::to_string(y));
            }
        } else if (field == MetaField::Politics) {
            for (int p = 0; p < kPoliticsCount; ++p) {
                const Politics politics = static_cast<Politics>(p);
                if (strategy.name == StrategyName::Pea) {
                    push_if_present(to_string(politics));
                } else if (strategy.special_tokens) {
                    push_if_present("[" + politics_abbrev(politics) + "]");
                } else {
                    push_if_present(politics_abbrev(politics));
                }
            }
        } else {
            throw std::invalid_argument("predict_metadata: restricted support is defined for"
                                        " year and politics fields only");
        }
        if (support.empty()) {
            throw std::runtime_error("predict_metadata: empty restricted support");
        }
        std::sort(support.begin(), support.end());
    } else {
        support.resize(dist.size());
        for (std::size_t i = 0; i < support.size(); ++i) {
            support[i] = static_cast<TokenId>(i);
        }
    }

    TokenId best = support.front();
    double best_p = dist[best];
    for (TokenId candidate : support) {
        if (dist[candidate] > best_p) {  // ties keep the lowest id
            best = candidate;
            best_p = dist[candidate];
        }
    }
    return {best, vocab.token(best), best_p};
}

const char* to_string(BaselineKind kind) {
    switch (kind) {
        case BaselineKind::Random: return "random";
        case BaselineKind::Majority: return "majority";
        case BaselineKind::BiasedRandom: return "biased_random";
        case BaselineKind::BiasedMajority: return "biased_majority";
    }
    return "majority";
}

BaselineKind baseline_kind_from_name(const std::string& name) {
    for (BaselineKind kind : {BaselineKind::Random, BaselineKind::Majority,
                              BaselineKind::BiasedRandom, BaselineKind::BiasedMajority}) {
        if (name == to_string(kind)) {
            return kind;
        }
    }
    throw std::invalid_argument("unknown baseline kind: '" + name + "'");
}

BaselineStats BaselineStats::from_labels(BaselineKind kind, const std::vector<std::string>& labels,
                                         std::optional<int> cutoff) {
    BaselineStats stats;
    stats.kind = kind;
    stats.cutoff = cutoff;
    for (const std::string& label : labels) {
        ++stats.counts[label];
    }
    if ((kind == BaselineKind::BiasedRandom || kind == BaselineKind::BiasedMajority) && !cutoff) {
        throw std::invalid_argument("biased baseline requires a year cutoff");
    }
    return stats;
}

std::string baseline_predict(const BaselineStats& stats, std::uint64_t seed) {
    const bool biased =
        stats.kind == BaselineKind::BiasedRandom || stats.kind == BaselineKind::BiasedMajority;
    std::map<std::string, int> counts;
    if (biased) {
        for (const auto& [label, count] : stats.counts) {
            const auto year = year_from_token(label);
            if (!year) {
                throw std::runtime_error("biased baseline: label '" + label +
                                         "' is not a year");
            }
            if (*year < *stats.cutoff) {
                counts.emplace(label, count);
            }
        }
    } else {
        counts = stats.counts;
    }
    if (counts.empty()) {
        throw std::runtime_error("baseline_predict: empty label distribution");
    }

    if (stats.kind == BaselineKind::Majority || stats.kind == BaselineKind::BiasedMajority) {
        auto best = counts.begin();
        for (auto it = counts.begin(); it != counts.end(); ++it) {
            if (it->second > best->second) {  // ties keep the smaller label
                best = it;
            }
        }
        return best->first;
    }

    long long total = 0;
    for (const auto& [label, count] : counts) {
        total += count;
    }
    Rng rng(seed);
    const double u = rng.uniform01() * static_cast<double>(total);
    double cumulative = 0.0;
    for (const auto& [label, count] : counts) {
        cumulative += static_cast<double>(count);
        if (u < cumulative) {
            return label;
        }
    }
    return counts.rbegin()->first;
}

}  // namespace mdma
