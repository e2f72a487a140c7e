#pragma once

#include <vector>

#include "mdma/model.hpp"
#include "mdma/templater.hpp"

namespace mdma {

enum class FinetuneTask { Politics5Class, AnimacyBinary, YearRegression };

const char* to_string(FinetuneTask task);
FinetuneTask finetune_task_from_name(const std::string& name);

/// politics: 5 logits; animacy: 1 logit; regression: 1 scalar.
int head_output_dim(FinetuneTask task);

/// Labels: politics = Politics ordinal in [0,5), animacy = 0/1, regression = calendar year.
struct LabeledSegment {
    FormattedSegment segment;
    int label = 0;
};

struct FinetuneSplits {
    std::vector<LabeledSegment> train;
    std::vector<LabeledSegment> validation;
    std::vector<LabeledSegment> test;
};

struct FinetuneMetrics {
    FinetuneTask task = FinetuneTask::Politics5Class;
    double accuracy = 0.0;       // classification tasks
    double macro_f1 = 0.0;       // politics
    double binary_f1 = 0.0;      // animacy
    double loss = 0.0;           // regression: test MSE
    double mae = 0.0;            // regression, in years
    double mse = 0.0;            // regression, in years^2
    double exact_year_accuracy = 0.0;
    double validation_loss = 0.0;
    std::vector<double> epoch_train_loss;
};

/// 10 epochs / lr 2e-4 for politics and year regression; 3 epochs / lr 1e-4 for animacy.
Hyper default_finetune_hyper(FinetuneTask task, std::uint64_t seed);

/// Prepend [CLS], freeze the backbone, train a linear head on the final [CLS]
/// representation, and score the test split.
FinetuneMetrics finetune(const Model& backbone, FinetuneTask task, const FinetuneSplits& splits,
                         const Hyper& hyper, const Vocab& vocab);
FinetuneMetrics finetune(const Checkpoint& checkpoint, FinetuneTask task,
                         const FinetuneSplits& splits, const Hyper& hyper, const Vocab& vocab);

}  // namespace mdma
