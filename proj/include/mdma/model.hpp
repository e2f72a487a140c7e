#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "mdma/masker.hpp"
#include "mdma/tokenizer.hpp"

namespace mdma {

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int model_dim = 128;
    int ff_dim = 512;
    int max_len = 160;
    int vocab_size = 0;
    double dropout = 0.1;
    std::uint64_t seed = 0;
};

enum class Optimizer { Adam };

struct Hyper {
    int epochs = 1;
    double learning_rate = 1e-3;
    int batch_size = 32;
    Optimizer optimizer = Optimizer::Adam;
    std::uint64_t seed = 0;
};

/// A batch of equal-length token sequences, row-major.
struct Batch {
    int batch = 0;
    int seq_len = 0;
    std::vector<TokenId> ids;     // batch * seq_len
    std::vector<TokenId> labels;  // batch * seq_len, kIgnoreLabel off-target; may be empty

    static Batch single(const std::vector<TokenId>& sequence);
};

/// Per-position log-probabilities over the vocabulary, row-normalized.
struct LogProbs {
    int batch = 0;
    int seq_len = 0;
    int vocab = 0;
    std::vector<double> data;

    double at(int b, int t, TokenId v) const {
        return data[(static_cast<std::size_t>(b) * seq_len + t) * vocab + v];
    }
};

struct MlmLossValue {
    double value = 0.0;
    bool all_ignored = false;
    int masked_count = 0;
};

struct NamedTensor {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::vector<float> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    ModelConfig config;
    std::uint64_t step_count = 0;
    std::uint64_t data_fingerprint = 0;
    std::vector<NamedTensor> tensors;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

struct TensorSpec {
    std::string name;
    std::vector<std::uint64_t> dims;
    std::size_t offset = 0;
    std::size_t size = 0;
};

struct TrainResult {
    std::vector<double> epoch_mean_loss;
    std::uint64_t steps = 0;
    std::uint64_t data_fingerprint = 0;
};

/// Bidirectional transformer-encoder MLM. Parameters are f32; all math runs
/// in f64 so scores and gradient checks are stable.
class Model {
public:
    static Model init(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    /// Eval-mode forward (no dropout).
    LogProbs forward(const Batch& batch) const;

    /// Normalized distribution at one position of a single sequence.
    std::vector<double> token_distribution(const std::vector<TokenId>& ids, int position) const;

    /// Final-layer hidden vectors at one position, per batch row (model_dim each).
    std::vector<double> final_hidden_at(const Batch& batch, int position) const;

    static MlmLossValue mlm_loss(const LogProbs& log_probs, const std::vector<TokenId>& labels);

    /// Adam over seeded-shuffled batches. All sequences must share one length.
    TrainResult train(const std::vector<MaskedPair>& dataset, const Hyper& hyper);

    /// Eval-mode loss with analytic parameter gradients (gradient-check surface).
    double loss_and_grad(const Batch& batch, std::vector<double>& grad) const;

    std::size_t param_count() const { return params_.size(); }
    float param(std::size_t i) const { return params_[i]; }
    void set_param(std::size_t i, float value);
    const std::vector<TensorSpec>& tensor_specs() const { return specs_; }

    Checkpoint to_checkpoint(std::uint64_t step_count = 0, std::uint64_t data_fingerprint = 0) const;
    static Model from_checkpoint(const Checkpoint& checkpoint);

private:
    Model() = default;

    ModelConfig config_;
    std::vector<TensorSpec> specs_;
    std::vector<float> params_;
    std::vector<double> params_d_;  // exact f64 mirror of params_

    void refresh_mirror();
    friend struct ModelOps;
};

/// Fingerprint of a masked dataset (ids and labels), for run metadata.
std::uint64_t dataset_fingerprint(const std::vector<MaskedPair>& dataset);

}  // namespace mdma
