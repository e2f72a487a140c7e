#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mdma/metrics.hpp"
#include "mdma/model.hpp"
#include "mdma/templater.hpp"

namespace mdma {

/// Per-segment pseudo-perplexity joined with the covariates the regression
/// analysis consumes.
struct EvalRecord {
    std::string segment_id;
    double pp = 0.0;
    int n = 0;
    double ocr = 0.0;
    int year = 0;
    int decade = 0;
    Politics politics = Politics::None;
    std::string model_name;
    std::string strategy;
};

/// Pseudo-log-likelihood: mask each content token in turn (metadata prefix
/// excluded), read log P of the true token under the full context, and sum.
double pll(const Model& model, const FormattedSegment& formatted, TokenId mask_id);

/// exp(-pll / N) with N the content-token count.
double pp(const Model& model, const FormattedSegment& formatted, TokenId mask_id);

struct PpEval {
    std::vector<EvalRecord> records;
    double mean = 0.0;
    double sd = 0.0;  // population standard deviation
};

std::pair<double, double> mean_and_population_sd(const std::vector<double>& values);

/// Score every segment under the model's own strategy prefix. Plain-strategy
/// models receive the "<year> [SEP]" evaluation prefix.
PpEval eval_pp(const Model& model, const std::vector<RawSegment>& segments,
               const Strategy& strategy, const Vocab& vocab, const std::string& model_name = "");

void write_eval_records_csv(const std::vector<EvalRecord>& records, const std::string& path);
std::vector<EvalRecord> read_eval_records_csv(const std::string& path);

struct MetadataPrediction {
    TokenId token = 0;
    std::string text;
    double probability = 0.0;
};

/// Mask the field's value slot and take the argmax filler. With
/// restrict_support, the argmax runs over the field's valid tokens only.
/// Ties break toward the lowest token id.
MetadataPrediction predict_metadata(const Model& model, const FormattedSegment& formatted,
                                    MetaField field, bool restrict_support, const Strategy& strategy,
                                    const Vocab& vocab, int year_min, int year_max);

/// "1861" or "[1861]" -> 1861.
std::optional<int> year_from_token(const std::string& token);
std::optional<Politics> politics_from_token(const std::string& token);

enum class BaselineKind { Random, Majority, BiasedRandom, BiasedMajority };

BaselineKind baseline_kind_from_name(const std::string& name);
const char* to_string(BaselineKind kind);

/// Empirical label distribution of the training split; biased kinds restrict
/// support to year labels before the cutoff.
struct BaselineStats {
    BaselineKind kind = BaselineKind::Majority;
    std::map<std::string, int> counts;  // ordered: ties resolve to the smaller label
    std::optional<int> cutoff;

    static BaselineStats from_labels(BaselineKind kind, const std::vector<std::string>& labels,
                                     std::optional<int> cutoff = std::nullopt);
};

/// Majority kinds return the modal label; random kinds one seeded draw.
std::string baseline_predict(const BaselineStats& stats, std::uint64_t seed);

}  // namespace mdma
