#include "mdma/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mdma/metrics.hpp"
#include "mdma/rng.hpp"

namespace mdma {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

struct Features {
    int rows = 0;
    int dim = 0;
    std::vector<double> data;  // rows x dim
    std::vector<int> labels;

    const double* row(int r) const { return data.data() + static_cast<std::size_t>(r) * dim; }
};

void validate_label(FinetuneTask task, int label) {
    switch (task) {
        case FinetuneTask::Politics5Class:
            if (label < 0 || label >= kPoliticsCount) {
                throw std::invalid_argument("politics label " + std::to_string(label) +
                                            " outside [0,5)");
            }
            break;
        case FinetuneTask::AnimacyBinary:
            if (label != 0 && label != 1) {
                throw std::invalid_argument("animacy label " + std::to_string(label) +
                                            " is not binary");
            }
            break;
        case FinetuneTask::YearRegression:
            if (label < 1 || label > 9999) {
                throw std::invalid_argument("year label " + std::to_string(label) +
                                            " outside [1,9999]");
            }
            break;
    }
}

/// Frozen-backbone [CLS] features, extracted in batches.
Features extract_features(const Model& backbone, const std::vector<LabeledSegment>& data,
                          FinetuneTask task, const Vocab& vocab) {
    Features features;
    features.dim = backbone.config().model_dim;
    features.rows = static_cast<int>(data.size());
    features.data.resize(static_cast<std::size_t>(features.rows) * features.dim);
    features.labels.reserve(data.size());
    if (data.empty()) {
        return features;
    }
    const TokenId cls = vocab.cls_id();
    const int seq_len = static_cast<int>(data.front().segment.ids.size()) + 1;
    constexpr int kChunk = 64;
    for (int start = 0; start < features.rows; start += kChunk) {
        const int b = std::min(kChunk, features.rows - start);
        Batch batch;
        batch.batch = b;
        batch.seq_len = seq_len;
        batch.ids.resize(static_cast<std::size_t>(b) * seq_len);
        for (int i = 0; i < b; ++i) {
            const LabeledSegment& item = data[start + i];
            validate_label(task, item.label);
            if (static_cast<int>(item.segment.ids.size()) + 1 != seq_len) {
                throw std::invalid_argument("finetune: all segments must share one length");
            }
            TokenId* dst = batch.ids.data() + static_cast<std::size_t>(i) * seq_len;
            dst[0] = cls;
            std::copy(item.segment.ids.begin(), item.segment.ids.end(), dst + 1);
        }
        const std::vector<double> hidden = backbone.final_hidden_at(batch, 0);
        std::copy(hidden.begin(), hidden.end(),
                  features.data.begin() + static_cast<std::size_t>(start) * features.dim);
    }
    for (const LabeledSegment& item : data) {
        features.labels.push_back(item.label);
    }
    return features;
}

struct Head {
    int in_dim = 0;
    int out_dim = 0;
    std::vector<double> w;  // out_dim x in_dim
    std::vector<double> b;  // out_dim

    void logits(const double* x, double* out) const {
        for (int o = 0; o < out_dim; ++o) {
            const double* w_row = w.data() + static_cast<std::size_t>(o) * in_dim;
            double acc = b[o];
            for (int i = 0; i < in_dim; ++i) {
                acc += w_row[i] * x[i];
            }
            out[o] = acc;
        }
    }
};

/// Mean loss and logit gradients for one example.
double example_loss(FinetuneTask task, const double* logits, int label, double target_scale_mid,
                    double target_scale_half, double* dlogits) {
    switch (task) {
        case FinetuneTask::Politics5Class: {
            double row_max = logits[0];
            for (int c = 1; c < kPoliticsCount; ++c) {
                row_max = std::max(row_max, logits[c]);
            }
            double denom = 0.0;
            for (int c = 0; c < kPoliticsCount; ++c) {
                denom += std::exp(logits[c] - row_max);
            }
            const double lse = row_max + std::log(denom);
            for (int c = 0; c < kPoliticsCount; ++c) {
                dlogits[c] = std::exp(logits[c] - lse);
            }
            dlogits[label] -= 1.0;
            return lse - logits[label];
        }
        case FinetuneTask::AnimacyBinary: {
            const double z = logits[0];
            const double p = 1.0 / (1.0 + std::exp(-z));
            dlogits[0] = p - label;
            // log(1+exp(-|z|)) form keeps the loss finite for large |z|
            const double softplus = std::log1p(std::exp(-std::abs(z)));
            return label == 1 ? (z > 0 ? softplus : softplus - z)
                              : (z > 0 ? softplus + z : softplus);
        }
        case FinetuneTask::YearRegression: {
            const double target = (label - target_scale_mid) / target_scale_half;
            const double diff = logits[0] - target;
            dlogits[0] = 2.0 * diff;
            return diff * diff;
        }
    }
    return 0.0;
}

double head_prediction_year(const Head& head, const double* x, double mid, double half) {
    double z = 0.0;
    head.logits(x, &z);
    return mid + half * z;
}

}  // namespace

const char* to_string(FinetuneTask task) {
    switch (task) {
        case FinetuneTask::Politics5Class: return "politics_5class";
        case FinetuneTask::AnimacyBinary: return "animacy_binary";
        case FinetuneTask::YearRegression: return "year_regression";
    }
    return "politics_5class";
}

FinetuneTask finetune_task_from_name(const std::string& name) {
    if (name == "politics_5class" || name == "politics") return FinetuneTask::Politics5Class;
    if (name == "animacy_binary" || name == "animacy") return FinetuneTask::AnimacyBinary;
    if (name == "year_regression" || name == "year") return FinetuneTask::YearRegression;
    throw std::invalid_argument("unknown finetune task: '" + name + "'");
}

int head_output_dim(FinetuneTask task) {
    return task == FinetuneTask::Politics5Class ? kPoliticsCount : 1;
}

Hyper default_finetune_hyper(FinetuneTask task, std::uint64_t seed) {
    Hyper hyper;
    hyper.seed = seed;
    hyper.batch_size = 32;
    if (task == FinetuneTask::AnimacyBinary) {
        hyper.epochs = 3;
        hyper.learning_rate = 1e-4;
    } else {
        hyper.epochs = 10;
        hyper.learning_rate = 2e-4;
    }
    return hyper;
}

FinetuneMetrics finetune(const Model& backbone, FinetuneTask task, const FinetuneSplits& splits,
                         const Hyper& hyper, const Vocab& vocab) {
    if (splits.train.empty()) {
        throw std::invalid_argument("finetune: empty training split");
    }
    if (splits.test.empty()) {
        throw std::invalid_argument("finetune: empty test split");
    }

    const Features train = extract_features(backbone, splits.train, task, vocab);
    const Features validation = extract_features(backbone, splits.validation, task, vocab);
    const Features test = extract_features(backbone, splits.test, task, vocab);

    // year targets are trained on a normalized scale derived from the train split
    double mid = 0.0, half = 1.0;
    if (task == FinetuneTask::YearRegression) {
        const auto [lo, hi] = std::minmax_element(train.labels.begin(), train.labels.end());
        mid = 0.5 * (*lo + *hi);
        half = std::max(1.0, 0.5 * (*hi - *lo));
    }

    Head head;
    head.in_dim = train.dim;
    head.out_dim = head_output_dim(task);
    Rng rng(hyper.seed);
    const double limit = std::sqrt(6.0 / (head.in_dim + head.out_dim));
    head.w.resize(static_cast<std::size_t>(head.out_dim) * head.in_dim);
    for (double& w : head.w) {
        w = (rng.uniform01() * 2.0 - 1.0) * limit;
    }
    head.b.assign(head.out_dim, 0.0);

    const std::size_t n_params = head.w.size() + head.b.size();
    std::vector<double> grad(n_params), adam_m(n_params, 0.0), adam_v(n_params, 0.0);
    std::vector<double> logits(head.out_dim), dlogits(head.out_dim);
    std::vector<std::size_t> order(train.rows);
    std::iota(order.begin(), order.end(), 0);

    FinetuneMetrics metrics;
    metrics.task = task;
    std::uint64_t step = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int epoch_examples = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(hyper.batch_size)) {
            const std::size_t stop =
                std::min(order.size(), start + static_cast<std::size_t>(hyper.batch_size));
            std::fill(grad.begin(), grad.end(), 0.0);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < stop; ++i) {
                const int r = static_cast<int>(order[i]);
                const double* x = train.row(r);
                head.logits(x, logits.data());
                batch_loss +=
                    example_loss(task, logits.data(), train.labels[r], mid, half, dlogits.data());
                for (int o = 0; o < head.out_dim; ++o) {
                    const double g = dlogits[o];
                    double* gw = grad.data() + static_cast<std::size_t>(o) * head.in_dim;
                    for (int c = 0; c < head.in_dim; ++c) {
                        gw[c] += g * x[c];
                    }
                    grad[head.w.size() + o] += g;
                }
            }
            const double scale = 1.0 / static_cast<double>(stop - start);
            ++step;
            const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
            for (std::size_t i = 0; i < n_params; ++i) {
                const double g = grad[i] * scale;
                adam_m[i] = kAdamBeta1 * adam_m[i] + (1.0 - kAdamBeta1) * g;
                adam_v[i] = kAdamBeta2 * adam_v[i] + (1.0 - kAdamBeta2) * g * g;
                double& p = i < head.w.size() ? head.w[i] : head.b[i - head.w.size()];
                p -= hyper.learning_rate * (adam_m[i] / bc1) / (std::sqrt(adam_v[i] / bc2) + kAdamEps);
            }
            epoch_loss += batch_loss;
            epoch_examples += static_cast<int>(stop - start);
        }
        metrics.epoch_train_loss.push_back(epoch_loss / epoch_examples);
    }

    auto mean_loss = [&](const Features& f) {
        if (f.rows == 0) {
            return 0.0;
        }
        double total = 0.0;
        for (int r = 0; r < f.rows; ++r) {
            head.logits(f.row(r), logits.data());
            total += example_loss(task, logits.data(), f.labels[r], mid, half, dlogits.data());
        }
        return total / f.rows;
    };
    metrics.validation_loss = mean_loss(validation);

    // test metrics
    if (task == FinetuneTask::YearRegression) {
        std::vector<int> rounded, truths;
        double abs_sum = 0.0, sq_sum = 0.0;
        for (int r = 0; r < test.rows; ++r) {
            const double pred = head_prediction_year(head, test.row(r), mid, half);
            const double diff = pred - test.labels[r];
            abs_sum += std::abs(diff);
            sq_sum += diff * diff;
            rounded.push_back(static_cast<int>(std::lround(pred)));
            truths.push_back(test.labels[r]);
        }
        metrics.mae = abs_sum / test.rows;
        metrics.mse = sq_sum / test.rows;
        metrics.loss = metrics.mse;
        metrics.exact_year_accuracy = accuracy(rounded, truths);
        metrics.accuracy = metrics.exact_year_accuracy;
        return metrics;
    }

    std::vector<int> predictions, truths;
    for (int r = 0; r < test.rows; ++r) {
        head.logits(test.row(r), logits.data());
        int argmax = 0;
        if (task == FinetuneTask::Politics5Class) {
            for (int c = 1; c < head.out_dim; ++c) {
                if (logits[c] > logits[argmax]) {
                    argmax = c;
                }
            }
        } else {
            argmax = logits[0] > 0.0 ? 1 : 0;
        }
        predictions.push_back(argmax);
        truths.push_back(test.labels[r]);
    }
    metrics.accuracy = accuracy(predictions, truths);
    if (task == FinetuneTask::Politics5Class) {
        std::vector<int> classes(kPoliticsCount);
        std::iota(classes.begin(), classes.end(), 0);
        metrics.macro_f1 = macro_prf(predictions, truths, classes).f1;
    } else {
        metrics.binary_f1 = binary_f1(predictions, truths);
    }
    return metrics;
}

FinetuneMetrics finetune(const Checkpoint& checkpoint, FinetuneTask task,
                         const FinetuneSplits& splits, const Hyper& hyper, const Vocab& vocab) {
    const Model backbone = Model::from_checkpoint(checkpoint);
    return finetune(backbone, task, splits, hyper, vocab);
}

}  // namespace mdma
