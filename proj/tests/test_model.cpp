#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "mdma/corpus.hpp"
#include "mdma/masker.hpp"
#include "mdma/model.hpp"
#include "mdma/rng.hpp"
#include "mdma/templater.hpp"
#include "mdma/tokenizer.hpp"

using namespace mdma;

namespace {

ModelConfig tiny_config(int vocab) {
    ModelConfig c;
    c.layers = 1;
    c.heads = 2;
    c.model_dim = 16;
    c.ff_dim = 32;
    c.max_len = 12;
    c.vocab_size = vocab;
    c.dropout = 0.0;
    c.seed = 7;
    return c;
}

Model uniform_model(int vocab, int max_len = 12) {
    ModelConfig c = tiny_config(vocab);
    c.max_len = max_len;
    Model m = Model::init(c);
    for (std::size_t i = 0; i < m.param_count(); ++i) {
        m.set_param(i, 0.0f);
    }
    return m;
}

Batch random_batch(int batch, int seq, int vocab, std::uint64_t seed, double label_rate) {
    Rng rng(seed);
    Batch b;
    b.batch = batch;
    b.seq_len = seq;
    for (int i = 0; i < batch * seq; ++i) {
        b.ids.push_back(static_cast<TokenId>(rng.uniform_int(vocab)));
        b.labels.push_back(rng.uniform01() < label_rate
                               ? static_cast<TokenId>(rng.uniform_int(vocab))
                               : kIgnoreLabel);
    }
    if (std::all_of(b.labels.begin(), b.labels.end(),
                    [](TokenId t) { return t == kIgnoreLabel; })) {
        b.labels[0] = 1;  // keep at least one target
    }
    return b;
}

// Planted-signal training setup shared by the behavioural tests.
struct TrainedFixture {
    DocumentSet corpus;
    Vocab vocab;
    Strategy strategy;
    Model model;
    std::vector<RawSegment> segments;
};

const TrainedFixture& trained_fixture() {
    static const TrainedFixture fx = [] {
        SynthSpec spec = SynthSpec::standard(1800, 1879, 4, 4, 100, 0.12, 400, 26);
        DocumentSet corpus = synthesize(spec, 2026);
        Strategy strategy = Strategy::preset(StrategyName::ErwtMask25);
        Vocab vocab = build_vocab(corpus, 1000, std::vector<Strategy>{strategy});
        std::vector<RawSegment> segments = chunk_all(corpus, 24, vocab);

        std::vector<MaskedPair> dataset;
        for (std::size_t i = 0; i < segments.size(); ++i) {
            const FormattedSegment f = format(segments[i], strategy, vocab);
            const MaskPlan plan = plan_masks(f, 0.15, 0.25, derive_seed(55, i), vocab);
            dataset.push_back(apply_masks(f, plan));
        }
        ModelConfig mc;
        mc.layers = 1;
        mc.heads = 2;
        mc.model_dim = 32;
        mc.ff_dim = 64;
        mc.max_len = 30;
        mc.vocab_size = vocab.size();
        mc.dropout = 0.1;
        mc.seed = 11;
        Model model = Model::init(mc);
        Hyper hyper;
        hyper.epochs = 10;
        hyper.learning_rate = 2e-3;
        hyper.batch_size = 32;
        hyper.seed = 21;
        model.train(dataset, hyper);
        return TrainedFixture{std::move(corpus), std::move(vocab), strategy, std::move(model),
                              std::move(segments)};
    }();
    return fx;
}

}  // namespace

TEST_CASE("init is bit-deterministic and validates dimensions") {
    const Model a = Model::init(tiny_config(30));
    const Model b = Model::init(tiny_config(30));
    REQUIRE(a.param_count() == b.param_count());
    for (std::size_t i = 0; i < a.param_count(); ++i) {
        REQUIRE(a.param(i) == b.param(i));
    }

    ModelConfig bad = tiny_config(30);
    bad.model_dim = 64;
    bad.heads = 5;
    CHECK_THROWS_AS(Model::init(bad), std::invalid_argument);
}

TEST_CASE("forward on a pad-only batch stays finite") {
    const Model m = Model::init(tiny_config(30));
    Batch batch;
    batch.batch = 2;
    batch.seq_len = 4;
    batch.ids.assign(8, 4);  // [PAD] id under the canonical layout
    const LogProbs lp = m.forward(batch);
    for (double v : lp.data) {
        CHECK(std::isfinite(v));
    }
}

TEST_CASE("forward distributions are normalized") {
    const Model m = Model::init(tiny_config(40));
    const Batch batch = random_batch(3, 7, 40, 99, 0.0);
    const LogProbs lp = m.forward(batch);
    for (int b = 0; b < 3; ++b) {
        for (int t = 0; t < 7; ++t) {
            double sum = 0.0;
            for (int v = 0; v < 40; ++v) {
                sum += std::exp(lp.at(b, t, v));
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
}

TEST_CASE("permuting batch rows permutes outputs bit-exactly") {
    const Model m = Model::init(tiny_config(25));
    const Batch batch = random_batch(4, 6, 25, 123, 0.0);
    Batch permuted = batch;
    const std::vector<int> perm = {2, 0, 3, 1};
    for (int row = 0; row < 4; ++row) {
        std::copy(batch.ids.begin() + perm[row] * 6, batch.ids.begin() + (perm[row] + 1) * 6,
                  permuted.ids.begin() + row * 6);
    }
    const LogProbs a = m.forward(batch);
    const LogProbs b = m.forward(permuted);
    for (int row = 0; row < 4; ++row) {
        for (int t = 0; t < 6; ++t) {
            for (int v = 0; v < 25; ++v) {
                REQUIRE(b.at(row, t, v) == a.at(perm[row], t, v));
            }
        }
    }
}

TEST_CASE("mlm_loss identities") {
    // perfect predictions: log-prob 0 at every label
    LogProbs perfect;
    perfect.batch = 1;
    perfect.seq_len = 3;
    perfect.vocab = 5;
    perfect.data.assign(15, -40.0);
    std::vector<TokenId> labels = {2, kIgnoreLabel, 4};
    perfect.data[0 * 5 + 2] = 0.0;
    perfect.data[2 * 5 + 4] = 0.0;
    const MlmLossValue zero = Model::mlm_loss(perfect, labels);
    CHECK(zero.value == doctest::Approx(0.0));
    CHECK(zero.masked_count == 2);
    CHECK_FALSE(zero.all_ignored);

    // uniform model over vocab 100
    const Model uniform = uniform_model(100);
    const Batch batch = random_batch(2, 5, 100, 7, 0.5);
    const MlmLossValue loss = Model::mlm_loss(uniform.forward(batch), batch.labels);
    CHECK(loss.value == doctest::Approx(std::log(100.0)).epsilon(1e-9));

    // all-ignore labels
    const std::vector<TokenId> ignore(10, kIgnoreLabel);
    const MlmLossValue ignored = Model::mlm_loss(uniform.forward(batch), ignore);
    CHECK(ignored.value == 0.0);
    CHECK(ignored.all_ignored);

    CHECK_THROWS_AS(Model::mlm_loss(perfect, std::vector<TokenId>(4, 0)),
                    std::invalid_argument);
}

TEST_CASE("analytic gradients match central finite differences") {
    ModelConfig c = tiny_config(20);
    c.layers = 2;
    c.model_dim = 8;
    c.ff_dim = 16;
    c.heads = 2;
    Model m = Model::init(c);
    const Batch batch = random_batch(2, 6, 20, 5, 0.4);

    std::vector<double> grad;
    m.loss_and_grad(batch, grad);
    REQUIRE(grad.size() == m.param_count());

    auto loss_at = [&]() { return Model::mlm_loss(m.forward(batch), batch.labels).value; };
    const double h = 1e-3;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < m.param_count(); ++i) {
        const float orig = m.param(i);
        const float hi = static_cast<float>(static_cast<double>(orig) + h);
        const float lo = static_cast<float>(static_cast<double>(orig) - h);
        m.set_param(i, hi);
        const double up = loss_at();
        m.set_param(i, lo);
        const double down = loss_at();
        m.set_param(i, orig);
        const double fd = (up - down) / (static_cast<double>(hi) - static_cast<double>(lo));
        const double scale = std::max({1e-6, std::abs(fd), std::abs(grad[i])});
        max_rel = std::max(max_rel, std::abs(fd - grad[i]) / scale);
    }
    MESSAGE("gradient check max relative error: " << max_rel);
    CHECK(max_rel < 1e-3);
}

TEST_CASE("training reduces the loss and is seed-reproducible") {
    SynthSpec spec = SynthSpec::standard(1800, 1879, 2, 2, 60, 0.1, 200, 18);
    const DocumentSet corpus = synthesize(spec, 808);
    const Strategy strategy = Strategy::preset(StrategyName::Erwt);
    const Vocab vocab = build_vocab(corpus, 600, std::vector<Strategy>{strategy});
    std::vector<MaskedPair> dataset;
    const auto segments = chunk_all(corpus, 16, vocab);
    REQUIRE(segments.size() == 200);
    for (std::size_t i = 0; i < segments.size(); ++i) {
        const FormattedSegment f = format(segments[i], strategy, vocab);
        dataset.push_back(apply_masks(f, plan_masks(f, 0.15, 0.15, derive_seed(3, i), vocab)));
    }

    ModelConfig mc = tiny_config(vocab.size());
    mc.layers = 2;
    mc.model_dim = 16;
    mc.ff_dim = 32;
    mc.max_len = 20;
    mc.dropout = 0.1;
    Model model = Model::init(mc);
    Hyper hyper;
    hyper.epochs = 30;
    hyper.learning_rate = 1e-3;
    hyper.batch_size = 32;
    hyper.seed = 4;
    const TrainResult result = model.train(dataset, hyper);
    REQUIRE(result.epoch_mean_loss.size() == 30);
    MESSAGE("train smoke: first epoch " << result.epoch_mean_loss.front() << ", last epoch "
                                        << result.epoch_mean_loss.back());
    CHECK(result.epoch_mean_loss.back() < result.epoch_mean_loss.front());

    // identical seeds give identical checkpoints
    Model again = Model::init(mc);
    again.train(dataset, hyper);
    bool identical = true;
    for (std::size_t i = 0; i < model.param_count(); ++i) {
        identical = identical && model.param(i) == again.param(i);
    }
    CHECK(identical);

    // zero learning rate leaves parameters untouched
    Model frozen = Model::init(mc);
    const Model reference = Model::init(mc);
    Hyper zero = hyper;
    zero.learning_rate = 0.0;
    zero.epochs = 1;
    frozen.train(dataset, zero);
    bool unchanged = true;
    for (std::size_t i = 0; i < frozen.param_count(); ++i) {
        unchanged = unchanged && frozen.param(i) == reference.param(i);
    }
    CHECK(unchanged);
}

TEST_CASE("train validates its inputs") {
    Model model = Model::init(tiny_config(30));
    Hyper hyper;
    CHECK_THROWS_AS(model.train({}, hyper), std::invalid_argument);
    std::vector<MaskedPair> mixed = {{{1, 2, 3}, {-1, -1, -1}}, {{1, 2}, {-1, -1}}};
    CHECK_THROWS_AS(model.train(mixed, hyper), std::invalid_argument);
}

TEST_CASE("token_distribution is normalized and spikes where the bias does") {
    Model m = uniform_model(50);
    // plant an output-bias spike at token 17
    std::size_t out_b_offset = 0;
    for (const TensorSpec& spec : m.tensor_specs()) {
        if (spec.name == "out_b") {
            out_b_offset = spec.offset;
        }
    }
    m.set_param(out_b_offset + 17, 40.0f);
    const std::vector<TokenId> ids = {1, 2, 3, 4};
    const std::vector<double> dist = m.token_distribution(ids, 2);
    double sum = 0.0;
    for (double p : dist) {
        sum += p;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(std::max_element(dist.begin(), dist.end()) - dist.begin() == 17);
    CHECK(dist[17] > 0.999);
}

TEST_CASE("a trained model listens to its metadata prefix") {
    const TrainedFixture& fx = trained_fixture();
    const RawSegment& seg = fx.segments.front();
    const FormattedSegment f = format(seg, fx.strategy, fx.vocab);
    // mask one content token, then vary the prefix year
    std::vector<TokenId> ids = f.ids;
    const int position = f.content_start + 3;
    ids[position] = fx.vocab.mask_id();
    const std::vector<double> with_own_year = fx.model.token_distribution(ids, position);
    ids[0] = fx.vocab.id("1805");
    const std::vector<double> with_other_year = fx.model.token_distribution(ids, position);
    bool any_difference = false;
    for (std::size_t v = 0; v < with_own_year.size(); ++v) {
        any_difference = any_difference || with_own_year[v] != with_other_year[v];
    }
    CHECK(any_difference);
}

TEST_CASE("checkpoint round trip is bit-exact") {
    const Model m = Model::init(tiny_config(30));
    const Checkpoint saved = m.to_checkpoint(123, 456);
    const std::string path = "/tmp/mdma_test_ckpt.bin";
    save_checkpoint(saved, path);
    const Checkpoint loaded = load_checkpoint(path);
    CHECK(loaded.step_count == 123);
    CHECK(loaded.data_fingerprint == 456);
    CHECK(loaded.config.model_dim == m.config().model_dim);
    const Model restored = Model::from_checkpoint(loaded);
    REQUIRE(restored.param_count() == m.param_count());
    for (std::size_t i = 0; i < m.param_count(); ++i) {
        REQUIRE(restored.param(i) == m.param(i));
    }
    // forward outputs preserved bit-exactly
    const Batch batch = random_batch(2, 5, 30, 1, 0.0);
    const LogProbs a = m.forward(batch);
    const LogProbs b = restored.forward(batch);
    REQUIRE(a.data == b.data);
}

TEST_CASE("checkpoint io reports distinct failure modes") {
    const Model m = Model::init(tiny_config(10));
    const std::string path = "/tmp/mdma_test_ckpt2.bin";
    save_checkpoint(m.to_checkpoint(), path);

    // corrupt magic
    {
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        std::fputc('X', f);
        std::fclose(f);
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"),
                             std::runtime_error);
    }
    // version mismatch
    save_checkpoint(m.to_checkpoint(), path);
    {
        std::FILE* f = std::fopen(path.c_str(), "r+b");
        std::fseek(f, 4, SEEK_SET);
        std::fputc(99, f);
        std::fclose(f);
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"),
                             std::runtime_error);
    }
    // truncation
    save_checkpoint(m.to_checkpoint(), path);
    {
        std::FILE* f = std::fopen(path.c_str(), "rb");
        std::fseek(f, 0, SEEK_END);
        const long size = std::ftell(f);
        std::fclose(f);
        std::filesystem::resize_file(path, static_cast<std::uintmax_t>(size - 5));
        CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("truncated"),
                             std::runtime_error);
    }
}

TEST_CASE("checkpoint round trip holds over random models") {
    Rng rng(5150);
    const std::string path = "/tmp/mdma_test_ckpt3.bin";
    for (int trial = 0; trial < 1000; ++trial) {
        ModelConfig c;
        c.layers = 1 + static_cast<int>(rng.uniform_int(2));
        c.heads = 1 + static_cast<int>(rng.uniform_int(2));
        c.model_dim = 4 * c.heads;
        c.ff_dim = 8;
        c.max_len = 6;
        c.vocab_size = 8 + static_cast<int>(rng.uniform_int(20));
        c.dropout = 0.0;
        c.seed = rng.next_u64();
        const Model m = Model::init(c);
        save_checkpoint(m.to_checkpoint(trial, rng.next_u64()), path);
        const Model restored = Model::from_checkpoint(load_checkpoint(path));
        REQUIRE(restored.param_count() == m.param_count());
        for (std::size_t i = 0; i < m.param_count(); ++i) {
            REQUIRE(restored.param(i) == m.param(i));
        }
    }
}

TEST_CASE("overlong sequences are rejected") {
    const Model m = Model::init(tiny_config(30));
    Batch batch;
    batch.batch = 1;
    batch.seq_len = 13;  // max_len is 12
    batch.ids.assign(13, 1);
    CHECK_THROWS_AS(m.forward(batch), std::invalid_argument);
}
