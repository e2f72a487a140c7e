#include "mdma/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <CLI11.hpp>

#include "mdma/analysis.hpp"
#include "mdma/config.hpp"
#include "mdma/corpus.hpp"
#include "mdma/eval.hpp"
#include "mdma/finetune.hpp"
#include "mdma/masker.hpp"
#include "mdma/model.hpp"
#include "mdma/rng.hpp"
#include "mdma/templater.hpp"
#include "mdma/tokenizer.hpp"

namespace mdma {

namespace {

constexpr const char* kVersion = "0.1.0";

// sub-seed indices off the global seed
enum SeedSlot : std::uint64_t {
    kSeedSynth = 11,
    kSeedSplit = 12,
    kSeedMask = 13,
    kSeedModel = 14,
    kSeedTrain = 15,
    kSeedSample = 16,
    kSeedBaseline = 17,
    kSeedFinetune = 18,
};

std::uint64_t hash_bytes(const std::string& bytes) {
    std::uint64_t hash = 0xCBF29CE484222325ull;
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001B3ull;
    }
    return hash;
}

struct CommandContext {
    KeyValueConfig config;
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool force = false;

    std::string path(const std::string& name) const { return out_dir + "/" + name; }

    /// Outputs are write-once per run directory unless --force is given.
    void check_writable(const std::string& file) const {
        if (!force && std::filesystem::exists(file)) {
            throw std::runtime_error("refusing to overwrite existing artifact " + file +
                                     " (pass --force to allow)");
        }
    }
};

CommandContext make_context(const std::string& config_path, bool force) {
    CommandContext ctx;
    ctx.config = KeyValueConfig::parse_file(config_path);
    ctx.config_path = config_path;
    ctx.out_dir = ctx.config.get_string("out_dir");
    ctx.seed = ctx.config.get_u64("seed", 0);
    ctx.force = force;
    std::filesystem::create_directories(ctx.out_dir);
    return ctx;
}

void write_run_meta(const CommandContext& ctx, const std::string& command) {
    std::ifstream in(ctx.config_path, std::ios::binary);
    std::ostringstream bytes;
    bytes << in.rdbuf();
    const std::string meta_path = ctx.path(command + ".meta");
    ctx.check_writable(meta_path);
    std::ofstream out(meta_path);
    out << "command = " << command << "\n"
        << "version = " << kVersion << "\n"
        << "seed = " << ctx.seed << "\n"
        << "config_hash = 0x" << std::hex << hash_bytes(bytes.str()) << std::dec << "\n";
}

std::string corpus_path(const CommandContext& ctx) {
    return ctx.config.get_string("corpus.path", ctx.path("corpus.ndjson"));
}

DocumentSet load_corpus(const CommandContext& ctx) {
    return ingest(corpus_path(ctx), ctx.config.get_int("corpus.year_min", 1800),
                  ctx.config.get_int("corpus.year_max", 1880));
}

Strategy config_strategy(const CommandContext& ctx) {
    return Strategy::from_name(ctx.config.get_string("strategy"));
}

std::vector<std::string> split_list(const std::string& csv) {
    std::vector<std::string> out;
    std::istringstream in(csv);
    std::string item;
    while (std::getline(in, item, ',')) {
        const std::size_t b = item.find_first_not_of(" \t");
        const std::size_t e = item.find_last_not_of(" \t");
        if (b != std::string::npos) {
            out.push_back(item.substr(b, e - b + 1));
        }
    }
    return out;
}

void write_manifest(const std::vector<RawSegment>& segments, const std::string& path) {
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot open manifest for writing: " + path);
    }
    for (const RawSegment& segment : segments) {
        out << segment.id << '\n';
    }
}

std::vector<std::string> read_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot open manifest: " + path);
    }
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            ids.push_back(line);
        }
    }
    return ids;
}

std::vector<RawSegment> segments_from_manifest(const std::vector<RawSegment>& all,
                                               const std::string& manifest_path) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < all.size(); ++i) {
        index[all[i].id] = i;
    }
    std::vector<RawSegment> out;
    for (const std::string& id : read_manifest(manifest_path)) {
        const auto it = index.find(id);
        if (it == index.end()) {
            throw std::runtime_error("manifest " + manifest_path + " names unknown segment '" +
                                     id + "'");
        }
        out.push_back(all[it->second]);
    }
    return out;
}

ModelConfig config_model(const CommandContext& ctx, int vocab_size) {
    ModelConfig mc;
    mc.layers = ctx.config.get_int("model.layers", 4);
    mc.heads = ctx.config.get_int("model.heads", 4);
    mc.model_dim = ctx.config.get_int("model.dim", 128);
    mc.ff_dim = ctx.config.get_int("model.ff", 512);
    mc.max_len = ctx.config.get_int("model.max_len", 160);
    mc.dropout = ctx.config.get_double("model.dropout", 0.1);
    mc.vocab_size = vocab_size;
    mc.seed = derive_seed(ctx.seed, kSeedModel);
    return mc;
}

struct Pipeline {
    DocumentSet corpus;
    Vocab vocab;
    std::vector<RawSegment> segments;
    Strategy strategy;
};

Pipeline load_pipeline(const CommandContext& ctx) {
    Pipeline p{load_corpus(ctx), Vocab::load(ctx.path("vocab.txt")), {}, config_strategy(ctx)};
    p.segments = chunk_all(p.corpus, ctx.config.get_int("chunk.n", 64), p.vocab);
    return p;
}

std::vector<MaskedPair> build_masked_dataset(const CommandContext& ctx, const Pipeline& p,
                                             const std::vector<RawSegment>& segments) {
    const double p_text = ctx.config.get_double("train.p_text", 0.15);
    const double p_meta = ctx.config.get_double("train.p_meta", p.strategy.p_meta);
    const int rounds = ctx.config.get_int("train.mask_rounds", 1);
    const std::uint64_t mask_seed = derive_seed(ctx.seed, kSeedMask);
    std::vector<MaskedPair> dataset;
    dataset.reserve(segments.size() * rounds);
    for (int round = 0; round < rounds; ++round) {
        for (std::size_t i = 0; i < segments.size(); ++i) {
            const FormattedSegment formatted = format(segments[i], p.strategy, p.vocab);
            const std::uint64_t seed =
                derive_seed(mask_seed, static_cast<std::uint64_t>(round) * segments.size() + i);
            const MaskPlan plan = plan_masks(formatted, p_text, p_meta, seed, p.vocab);
            dataset.push_back(apply_masks(formatted, plan));
        }
    }
    return dataset;
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const CommandContext& ctx) {
    SynthSpec spec = SynthSpec::standard(
        ctx.config.get_int("corpus.year_min", 1800), ctx.config.get_int("corpus.year_max", 1879),
        ctx.config.get_int("synth.markers_per_decade", 4),
        ctx.config.get_int("synth.markers_per_politics", 4),
        ctx.config.get_int("synth.background_vocab", 300),
        ctx.config.get_double("synth.rate", 0.1), ctx.config.get_int("synth.docs", 1000),
        ctx.config.get_int("synth.doc_len", 100));
    const DocumentSet corpus = synthesize(spec, derive_seed(ctx.seed, kSeedSynth));
    const std::string path = ctx.path("corpus.ndjson");
    ctx.check_writable(path);
    write_corpus(corpus, path);
    write_run_meta(ctx, "synth");
    std::cout << "synth: wrote " << corpus.docs.size() << " documents to " << path << "\n";
    return 0;
}

int cmd_prepare(const CommandContext& ctx) {
    const DocumentSet corpus = load_corpus(ctx);
    const Strategy strategy = config_strategy(ctx);
    const Vocab vocab =
        build_vocab(corpus, ctx.config.get_int("vocab.max_size", 4000), {strategy});
    const std::string vocab_path = ctx.path("vocab.txt");
    ctx.check_writable(vocab_path);
    vocab.save(vocab_path);

    const std::vector<RawSegment> segments =
        chunk_all(corpus, ctx.config.get_int("chunk.n", 64), vocab);
    SplitCounts counts;
    counts.train = ctx.config.get_int("split.train");
    counts.validation = ctx.config.get_int("split.val", 0);
    counts.test = ctx.config.get_int("split.test", 0);
    const SegmentSplit parts = split(segments, counts, derive_seed(ctx.seed, kSeedSplit));
    for (const auto& [name, list] :
         std::initializer_list<std::pair<const char*, const std::vector<RawSegment>*>>{
             {"train.ids", &parts.train}, {"val.ids", &parts.validation}, {"test.ids", &parts.test}}) {
        const std::string path = ctx.path(name);
        ctx.check_writable(path);
        write_manifest(*list, path);
    }
    write_run_meta(ctx, "prepare");
    std::cout << "prepare: vocab " << vocab.size() << " tokens, " << segments.size()
              << " segments split " << counts.train << "/" << counts.validation << "/"
              << counts.test << "\n";
    return 0;
}

int cmd_train(const CommandContext& ctx) {
    const Pipeline p = load_pipeline(ctx);
    const std::vector<RawSegment> train_segments =
        segments_from_manifest(p.segments, ctx.path("train.ids"));
    if (train_segments.empty()) {
        throw std::runtime_error("train: empty training manifest");
    }
    const std::vector<MaskedPair> dataset = build_masked_dataset(ctx, p, train_segments);

    Model model = Model::init(config_model(ctx, p.vocab.size()));
    Hyper hyper;
    hyper.epochs = ctx.config.get_int("train.epochs", 1);
    hyper.learning_rate = ctx.config.get_double("train.lr", 1e-3);
    hyper.batch_size = ctx.config.get_int("train.batch", 32);
    hyper.seed = derive_seed(ctx.seed, kSeedTrain);
    const TrainResult result = model.train(dataset, hyper);

    const std::string ckpt_path = ctx.path("model.ckpt");
    ctx.check_writable(ckpt_path);
    save_checkpoint(model.to_checkpoint(result.steps, result.data_fingerprint), ckpt_path);

    const std::string loss_path = ctx.path("train_loss.csv");
    ctx.check_writable(loss_path);
    std::ofstream loss_csv(loss_path);
    loss_csv << "epoch,mean_loss\n";
    for (std::size_t e = 0; e < result.epoch_mean_loss.size(); ++e) {
        loss_csv << (e + 1) << ',' << result.epoch_mean_loss[e] << '\n';
    }
    write_run_meta(ctx, "train");
    std::cout << "train: " << result.steps << " steps, final epoch loss "
              << result.epoch_mean_loss.back() << ", checkpoint " << ckpt_path << "\n";
    return 0;
}

int cmd_eval_pp(const CommandContext& ctx) {
    const Pipeline p = load_pipeline(ctx);
    const Model model = Model::from_checkpoint(load_checkpoint(ctx.path("model.ckpt")));
    std::vector<RawSegment> segments = segments_from_manifest(
        p.segments, ctx.path(ctx.config.get_string("eval.split", "test") + ".ids"));
    const int limit = ctx.config.get_int("eval.segments", 0);
    if (limit > 0 && static_cast<int>(segments.size()) > limit) {
        segments.resize(limit);
    }
    const std::string model_name =
        ctx.config.get_string("model.name", to_string(p.strategy.name));
    const PpEval result = eval_pp(model, segments, p.strategy, p.vocab, model_name);
    const std::string records_path = ctx.path("pp_records.csv");
    ctx.check_writable(records_path);
    write_eval_records_csv(result.records, records_path);
    write_run_meta(ctx, "eval-pp");
    std::cout << "eval-pp: " << result.records.size() << " segments, mean pp " << result.mean
              << ", sd " << result.sd << "\n";
    return 0;
}

int cmd_eval_maskfill(const CommandContext& ctx) {
    const Pipeline p = load_pipeline(ctx);
    const Model model = Model::from_checkpoint(load_checkpoint(ctx.path("model.ckpt")));

    const std::string field_name = ctx.config.get_string("maskfill.field", "year");
    const MetaField field = field_name == "politics" ? MetaField::Politics : MetaField::Year;
    if (field_name != "year" && field_name != "politics") {
        throw std::runtime_error("maskfill.field must be 'year' or 'politics'");
    }

    const std::vector<RawSegment> pool = segments_from_manifest(
        p.segments, ctx.path(ctx.config.get_string("eval.split", "test") + ".ids"));
    SampleSpec spec;
    const std::string kind = ctx.config.get_string("maskfill.sample_kind", "random");
    if (kind == "random") {
        spec.kind = SampleKind::Random;
    } else if (kind == "keyword") {
        spec.kind = SampleKind::Keyword;
        spec.keywords = ctx.config.has("maskfill.keywords")
                            ? split_list(ctx.config.get_string("maskfill.keywords"))
                            : default_political_keywords();
    } else if (kind == "bad_ocr_pre_cutoff") {
        spec.kind = SampleKind::BadOcrPreCutoff;
        spec.year_cutoff = ctx.config.get_int("maskfill.year_cutoff", 1830);
        spec.ocr_threshold = ctx.config.get_double("maskfill.ocr_threshold", 0.5);
    } else {
        throw std::runtime_error("unknown maskfill.sample_kind: '" + kind + "'");
    }
    spec.size = ctx.config.get_int("maskfill.size", static_cast<int>(pool.size()));
    spec.scrub_years = ctx.config.get_bool("maskfill.scrub", false);
    spec.seed = derive_seed(ctx.seed, kSeedSample);
    const std::vector<RawSegment> chosen = sample(pool, spec);

    const int year_min = ctx.config.get_int("corpus.year_min", 1800);
    const int year_max = ctx.config.get_int("corpus.year_max", 1880);

    // label distribution of the LM training pool feeds the baselines
    const std::vector<RawSegment> train_pool =
        segments_from_manifest(p.segments, ctx.path("train.ids"));
    std::vector<std::string> train_labels;
    train_labels.reserve(train_pool.size());
    for (const RawSegment& seg : train_pool) {
        train_labels.push_back(field == MetaField::Year ? std::to_string(seg.year)
                                                        : to_string(seg.politics));
    }
    const bool biased = ctx.config.get_bool("maskfill.biased_baselines", false);
    const std::optional<int> cutoff =
        biased ? std::optional<int>(ctx.config.get_int("maskfill.year_cutoff", 1830))
               : std::nullopt;
    const auto majority_stats = BaselineStats::from_labels(
        biased ? BaselineKind::BiasedMajority : BaselineKind::Majority, train_labels, cutoff);
    const auto random_stats = BaselineStats::from_labels(
        biased ? BaselineKind::BiasedRandom : BaselineKind::Random, train_labels, cutoff);
    const std::uint64_t baseline_seed = derive_seed(ctx.seed, kSeedBaseline);

    const std::string pred_path = ctx.path("maskfill_predictions.csv");
    ctx.check_writable(pred_path);
    std::ofstream pred_csv(pred_path);
    pred_csv << "segment_id,truth,prediction,probability,unrestricted,agree\n";

    std::vector<int> model_pred, truth, majority_pred, random_pred;
    std::vector<int> model_pol, truth_pol, majority_pol, random_pol;
    int disagreement = 0;
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        const RawSegment& seg = chosen[i];
        const FormattedSegment formatted = format(seg, p.strategy, p.vocab);
        const MetadataPrediction restricted =
            predict_metadata(model, formatted, field, true, p.strategy, p.vocab, year_min, year_max);
        const MetadataPrediction unrestricted = predict_metadata(
            model, formatted, field, false, p.strategy, p.vocab, year_min, year_max);
        const bool agree = restricted.token == unrestricted.token;
        disagreement += agree ? 0 : 1;
        const std::string majority_label = baseline_predict(majority_stats, 0);
        const std::string random_label = baseline_predict(random_stats, derive_seed(baseline_seed, i));
        std::string truth_label;
        if (field == MetaField::Year) {
            truth_label = std::to_string(seg.year);
            model_pred.push_back(year_from_token(restricted.text).value());
            truth.push_back(seg.year);
            majority_pred.push_back(year_from_token(majority_label).value());
            random_pred.push_back(year_from_token(random_label).value());
        } else {
            truth_label = to_string(seg.politics);
            model_pol.push_back(static_cast<int>(politics_from_token(restricted.text).value()));
            truth_pol.push_back(static_cast<int>(seg.politics));
            majority_pol.push_back(
                static_cast<int>(politics_from_string(majority_label).value()));
            random_pol.push_back(static_cast<int>(politics_from_string(random_label).value()));
        }
        pred_csv << seg.id << ',' << truth_label << ',' << restricted.text << ','
                 << restricted.probability << ',' << unrestricted.text << ','
                 << (agree ? 1 : 0) << '\n';
    }

    const std::string summary_path = ctx.path("maskfill_summary.csv");
    ctx.check_writable(summary_path);
    std::ofstream summary(summary_path);
    const double disagreement_rate = static_cast<double>(disagreement) / chosen.size();
    if (field == MetaField::Year) {
        summary << "predictor,mae\n";
        summary << "model," << mae(model_pred, truth) << '\n';
        summary << to_string(random_stats.kind) << ',' << mae(random_pred, truth) << '\n';
        summary << to_string(majority_stats.kind) << ',' << mae(majority_pred, truth) << '\n';
        summary << "unrestricted_disagreement," << disagreement_rate << '\n';
        std::cout << "eval-maskfill: model mae " << mae(model_pred, truth) << ", random "
                  << mae(random_pred, truth) << ", majority " << mae(majority_pred, truth)
                  << "\n";
    } else {
        std::vector<int> classes(kPoliticsCount);
        std::iota(classes.begin(), classes.end(), 0);
        summary << "predictor,macro_f1,macro_precision,macro_recall,accuracy\n";
        auto row = [&](const char* name, const std::vector<int>& preds) {
            const MacroPrf prf = macro_prf(preds, truth_pol, classes);
            summary << name << ',' << prf.f1 << ',' << prf.precision << ',' << prf.recall << ','
                    << accuracy(preds, truth_pol) << '\n';
        };
        row("model", model_pol);
        row("random", random_pol);
        row("majority", majority_pol);
        summary << "unrestricted_disagreement," << disagreement_rate << ",,,\n";
        std::cout << "eval-maskfill: model macro f1 "
                  << macro_prf(model_pol, truth_pol, classes).f1 << "\n";
    }
    write_run_meta(ctx, "eval-maskfill");
    return 0;
}

int cmd_finetune(const CommandContext& ctx) {
    const Pipeline p = load_pipeline(ctx);
    const Checkpoint ckpt = load_checkpoint(ctx.path("model.ckpt"));
    const FinetuneTask task = finetune_task_from_name(ctx.config.get_string("finetune.task"));

    const std::vector<RawSegment> pool = segments_from_manifest(
        p.segments, ctx.path(ctx.config.get_string("finetune.split", "test") + ".ids"));
    SplitCounts counts;
    counts.train = ctx.config.get_int("finetune.train");
    counts.validation = ctx.config.get_int("finetune.val", 0);
    counts.test = ctx.config.get_int("finetune.test");
    const SegmentSplit parts = split(pool, counts, derive_seed(ctx.seed, kSeedFinetune));

    std::map<std::string, int> label_file;
    if (task == FinetuneTask::AnimacyBinary) {
        const std::string labels_path = ctx.config.get_string("finetune.labels");
        std::ifstream in(labels_path);
        if (!in) {
            throw std::runtime_error("cannot open finetune labels file: " + labels_path);
        }
        std::string line;
        while (std::getline(in, line)) {
            const std::size_t comma = line.find(',');
            if (comma == std::string::npos) {
                continue;
            }
            label_file[line.substr(0, comma)] = std::stoi(line.substr(comma + 1));
        }
    }
    auto labelled = [&](const std::vector<RawSegment>& segments) {
        std::vector<LabeledSegment> out;
        out.reserve(segments.size());
        for (const RawSegment& seg : segments) {
            LabeledSegment item;
            item.segment = format(seg, p.strategy, p.vocab);
            switch (task) {
                case FinetuneTask::Politics5Class:
                    item.label = static_cast<int>(seg.politics);
                    break;
                case FinetuneTask::YearRegression:
                    item.label = seg.year;
                    break;
                case FinetuneTask::AnimacyBinary: {
                    const auto it = label_file.find(seg.id);
                    if (it == label_file.end()) {
                        throw std::runtime_error("finetune labels file has no entry for segment '" +
                                                 seg.id + "'");
                    }
                    item.label = it->second;
                    break;
                }
            }
            out.push_back(std::move(item));
        }
        return out;
    };
    FinetuneSplits splits{labelled(parts.train), labelled(parts.validation), labelled(parts.test)};

    Hyper hyper = default_finetune_hyper(task, derive_seed(ctx.seed, kSeedFinetune + 100));
    hyper.epochs = ctx.config.get_int("finetune.epochs", hyper.epochs);
    hyper.learning_rate = ctx.config.get_double("finetune.lr", hyper.learning_rate);
    hyper.batch_size = ctx.config.get_int("finetune.batch", hyper.batch_size);

    const FinetuneMetrics metrics = finetune(ckpt, task, splits, hyper, p.vocab);

    const std::string metrics_path = ctx.path("finetune_metrics.csv");
    ctx.check_writable(metrics_path);
    std::ofstream out(metrics_path);
    out << "task,metric,value\n";
    const char* task_name = to_string(task);
    switch (task) {
        case FinetuneTask::Politics5Class:
            out << task_name << ",macro_f1," << metrics.macro_f1 << '\n';
            out << task_name << ",accuracy," << metrics.accuracy << '\n';
            break;
        case FinetuneTask::AnimacyBinary:
            out << task_name << ",binary_f1," << metrics.binary_f1 << '\n';
            out << task_name << ",accuracy," << metrics.accuracy << '\n';
            break;
        case FinetuneTask::YearRegression:
            out << task_name << ",loss," << metrics.loss << '\n';
            out << task_name << ",mae," << metrics.mae << '\n';
            out << task_name << ",mse," << metrics.mse << '\n';
            out << task_name << ",exact_year_accuracy," << metrics.exact_year_accuracy << '\n';
            break;
    }
    write_run_meta(ctx, "finetune");
    std::cout << "finetune: task " << task_name << ", accuracy " << metrics.accuracy << "\n";
    return 0;
}

int cmd_analyze(const CommandContext& ctx) {
    const std::string records_path =
        ctx.config.get_string("analysis.records", ctx.path("pp_records.csv"));
    const std::vector<EvalRecord> records = read_eval_records_csv(records_path);

    Formula formula = Formula::standard();
    if (ctx.config.has("analysis.numeric")) {
        formula.numeric = split_list(ctx.config.get_string("analysis.numeric"));
    }
    if (ctx.config.has("analysis.dummies")) {
        formula.dummies = split_list(ctx.config.get_string("analysis.dummies"));
    }
    if (ctx.config.has("analysis.categorical")) {
        formula.categorical = split_list(ctx.config.get_string("analysis.categorical"));
    }

    const RegressionResult result = ols(design(records, formula));
    const std::string report_path = ctx.path("regression_report.csv");
    ctx.check_writable(report_path);
    write_regression_csv(result, report_path);

    if (ctx.config.has("analysis.paired_greater_a") && ctx.config.has("analysis.paired_greater_b")) {
        const auto a_records =
            read_eval_records_csv(ctx.config.get_string("analysis.paired_greater_a"));
        const auto b_records =
            read_eval_records_csv(ctx.config.get_string("analysis.paired_greater_b"));
        std::map<std::string, double> b_by_id;
        for (const EvalRecord& r : b_records) {
            b_by_id[r.segment_id] = r.pp;
        }
        std::vector<double> a_pp, b_pp;
        for (const EvalRecord& r : a_records) {
            const auto it = b_by_id.find(r.segment_id);
            if (it != b_by_id.end()) {
                a_pp.push_back(r.pp);
                b_pp.push_back(it->second);
            }
        }
        const TTestResult tt = paired_t_greater(a_pp, b_pp);
        std::cout << "analyze: paired t (a > b) over " << a_pp.size() << " segments: t = " << tt.t
                  << ", p = " << tt.p << "\n";
    }
    write_run_meta(ctx, "analyze");
    std::cout << "analyze: " << records.size() << " records, R^2 = " << result.r_squared << ", "
              << result.terms.size() << " terms -> " << report_path << "\n";
    return 0;
}

int cmd_fill(const CommandContext& ctx, int year, const std::string& politics_name,
             const std::string& location, const std::string& text, int topk) {
    const Vocab vocab = Vocab::load(ctx.path("vocab.txt"));
    const Model model = Model::from_checkpoint(load_checkpoint(ctx.path("model.ckpt")));
    const Strategy strategy = config_strategy(ctx);

    const auto politics = politics_from_string(politics_name);
    if (!politics) {
        throw std::runtime_error("unknown politics label: '" + politics_name + "'");
    }
    const std::string prefix = render_prefix(strategy, year, *politics, location);
    const std::string full_text = prefix.empty() ? text : prefix + " " + text;
    const std::vector<TokenId> ids = encode(full_text, vocab);

    int mask_position = -1;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == vocab.mask_id()) {
            mask_position = static_cast<int>(i);
            break;
        }
    }
    if (mask_position < 0) {
        throw std::runtime_error("fill: text contains no [MASK] token");
    }

    const std::vector<double> dist = model.token_distribution(ids, mask_position);
    std::vector<TokenId> order(dist.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](TokenId a, TokenId b) { return dist[a] > dist[b]; });
    std::cout << "input: " << full_text << "\n";
    for (int k = 0; k < topk && k < static_cast<int>(order.size()); ++k) {
        std::cout << (k + 1) << ". " << vocab.token(order[k]) << "  " << dist[order[k]] << "\n";
    }
    return 0;
}

int cmd_format_preview(const std::string& strategy_name, int year,
                       const std::string& politics_name, const std::string& location) {
    const Strategy strategy = Strategy::from_name(strategy_name);
    const auto politics = politics_from_string(politics_name);
    if (!politics) {
        throw std::runtime_error("unknown politics label: '" + politics_name + "'");
    }
    const std::string prefix = render_prefix(strategy, year, *politics, location);
    std::cout << (prefix.empty() ? "(no prefix)" : prefix) << "\n";
    return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"mdma: metadata-conditioned masked language modeling lab"};
    app.require_subcommand(1);

    std::string config_path;
    bool force = false;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config file")->required();
        cmd->add_flag("--force", force, "allow overwriting artifacts in the run directory");
    };

    CLI::App* synth = app.add_subcommand("synth", "generate a planted-signal corpus");
    add_config(synth);
    CLI::App* prepare = app.add_subcommand("prepare", "build vocabulary and split manifests");
    add_config(prepare);
    CLI::App* train = app.add_subcommand("train", "train the masked language model");
    add_config(train);
    CLI::App* eval_pp_cmd = app.add_subcommand("eval-pp", "pseudo-perplexity per segment");
    add_config(eval_pp_cmd);
    CLI::App* maskfill = app.add_subcommand("eval-maskfill", "metadata mask-fill prediction");
    add_config(maskfill);
    CLI::App* finetune_cmd = app.add_subcommand("finetune", "train a task head on [CLS] features");
    add_config(finetune_cmd);
    CLI::App* analyze = app.add_subcommand("analyze", "regress pseudo-perplexity on covariates");
    add_config(analyze);

    int fill_year = 1860;
    std::string fill_politics = "none";
    std::string fill_location = "london";
    std::string fill_text;
    int fill_topk = 5;
    CLI::App* fill = app.add_subcommand("fill", "print top-k fillers for a [MASK] position");
    add_config(fill);
    fill->add_option("--year", fill_year, "metadata year for the prefix");
    fill->add_option("--politics", fill_politics, "metadata politics for the prefix");
    fill->add_option("--location", fill_location, "metadata location for the prefix");
    fill->add_option("--text", fill_text, "text containing one [MASK] token")->required();
    fill->add_option("--topk", fill_topk, "number of fillers to print");

    std::string preview_strategy;
    int preview_year = 1861;
    std::string preview_politics = "liberal";
    std::string preview_location = "london";
    CLI::App* preview = app.add_subcommand("format-preview", "render a strategy prefix");
    preview->add_option("--strategy", preview_strategy, "strategy name")->required();
    preview->add_option("--year", preview_year, "metadata year");
    preview->add_option("--politics", preview_politics, "metadata politics");
    preview->add_option("--location", preview_location, "metadata location");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n" << app.help();
        return 2;
    }

    try {
        if (preview->parsed()) {
            return cmd_format_preview(preview_strategy, preview_year, preview_politics,
                                      preview_location);
        }
        const CommandContext ctx = make_context(config_path, force);
        if (synth->parsed()) return cmd_synth(ctx);
        if (prepare->parsed()) return cmd_prepare(ctx);
        if (train->parsed()) return cmd_train(ctx);
        if (eval_pp_cmd->parsed()) return cmd_eval_pp(ctx);
        if (maskfill->parsed()) return cmd_eval_maskfill(ctx);
        if (finetune_cmd->parsed()) return cmd_finetune(ctx);
        if (analyze->parsed()) return cmd_analyze(ctx);
        if (fill->parsed()) {
            return cmd_fill(ctx, fill_year, fill_politics, fill_location, fill_text, fill_topk);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "error: no subcommand\n";
    return 2;
}

}  // namespace mdma
