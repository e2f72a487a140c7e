#include "mdma/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mdma/rng.hpp"

namespace mdma {

namespace {

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// ---------------------------------------------------------------------------
// kernels (all f64, fixed reduction order)
// ---------------------------------------------------------------------------

// out[m,n] = a[m,k] w[k,n] + bias[n]
void linear_forward(double* out, const double* a, const double* w, const double* bias, int M,
                    int K, int N) {
    for (int m = 0; m < M; ++m) {
        double* out_row = out + static_cast<std::size_t>(m) * N;
        if (bias != nullptr) {
            std::memcpy(out_row, bias, sizeof(double) * N);
        } else {
            std::memset(out_row, 0, sizeof(double) * N);
        }
        const double* a_row = a + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const double s = a_row[k];
            const double* w_row = w + static_cast<std::size_t>(k) * N;
            for (int n = 0; n < N; ++n) {
                out_row[n] += s * w_row[n];
            }
        }
    }
}

// da[m,k] += dout[m,n] w[k,n]
void linear_backward_input(double* da, const double* dout, const double* w, int M, int K, int N) {
    for (int m = 0; m < M; ++m) {
        const double* dout_row = dout + static_cast<std::size_t>(m) * N;
        double* da_row = da + static_cast<std::size_t>(m) * K;
        for (int k = 0; k < K; ++k) {
            const double* w_row = w + static_cast<std::size_t>(k) * N;
            double acc = 0.0;
            for (int n = 0; n < N; ++n) {
                acc += dout_row[n] * w_row[n];
            }
            da_row[k] += acc;
        }
    }
}

// dw[k,n] += a[m,k] dout[m,n];  db[n] += sum_m dout[m,n]
void linear_backward_params(double* dw, double* db, const double* dout, const double* a, int M,
                            int K, int N) {
    for (int k = 0; k < K; ++k) {
        double* dw_row = dw + static_cast<std::size_t>(k) * N;
        for (int m = 0; m < M; ++m) {
            const double s = a[static_cast<std::size_t>(m) * K + k];
            const double* dout_row = dout + static_cast<std::size_t>(m) * N;
            for (int n = 0; n < N; ++n) {
                dw_row[n] += s * dout_row[n];
            }
        }
    }
    if (db != nullptr) {
        for (int m = 0; m < M; ++m) {
            const double* dout_row = dout + static_cast<std::size_t>(m) * N;
            for (int n = 0; n < N; ++n) {
                db[n] += dout_row[n];
            }
        }
    }
}

void layernorm_forward(double* out, double* mean, double* rstd, const double* x, const double* g,
                       const double* b, int rows, int d) {
    constexpr double kEps = 1e-5;
    for (int r = 0; r < rows; ++r) {
        const double* x_row = x + static_cast<std::size_t>(r) * d;
        double m = 0.0;
        for (int i = 0; i < d; ++i) {
            m += x_row[i];
        }
        m /= d;
        double var = 0.0;
        for (int i = 0; i < d; ++i) {
            const double c = x_row[i] - m;
            var += c * c;
        }
        var /= d;
        const double rs = 1.0 / std::sqrt(var + kEps);
        double* out_row = out + static_cast<std::size_t>(r) * d;
        for (int i = 0; i < d; ++i) {
            out_row[i] = (x_row[i] - m) * rs * g[i] + b[i];
        }
        mean[r] = m;
        rstd[r] = rs;
    }
}

// dx is accumulated; dg/db accumulated
void layernorm_backward(double* dx, double* dg, double* db, const double* dout, const double* x,
                        const double* g, const double* mean, const double* rstd, int rows, int d) {
    for (int r = 0; r < rows; ++r) {
        const double* dout_row = dout + static_cast<std::size_t>(r) * d;
        const double* x_row = x + static_cast<std::size_t>(r) * d;
        double* dx_row = dx + static_cast<std::size_t>(r) * d;
        const double m = mean[r];
        const double rs = rstd[r];

        double dnorm_mean = 0.0;
        double dnorm_norm_mean = 0.0;
        for (int i = 0; i < d; ++i) {
            const double norm = (x_row[i] - m) * rs;
            const double dnorm = dout_row[i] * g[i];
            dnorm_mean += dnorm;
            dnorm_norm_mean += dnorm * norm;
        }
        dnorm_mean /= d;
        dnorm_norm_mean /= d;

        for (int i = 0; i < d; ++i) {
            const double norm = (x_row[i] - m) * rs;
            const double dnorm = dout_row[i] * g[i];
            dg[i] += dout_row[i] * norm;
            db[i] += dout_row[i];
            dx_row[i] += (dnorm - dnorm_mean - norm * dnorm_norm_mean) * rs;
        }
    }
}

void gelu_forward(double* out, const double* x, std::size_t n) {
    constexpr double kInvSqrt2 = 0.7071067811865476;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
    }
}

void gelu_backward(double* dx, const double* dout, const double* x, std::size_t n) {
    constexpr double kInvSqrt2 = 0.7071067811865476;
    constexpr double kInvSqrt2Pi = 0.3989422804014327;
    for (std::size_t i = 0; i < n; ++i) {
        const double cdf = 0.5 * (1.0 + std::erf(x[i] * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]);
        dx[i] = dout[i] * (cdf + x[i] * pdf);
    }
}

// ---------------------------------------------------------------------------
// parameter layout
// ---------------------------------------------------------------------------

struct LayerOffsets {
    std::size_t ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Layout {
    std::vector<TensorSpec> specs;
    std::size_t tok_emb = 0, pos_emb = 0, lnf_g = 0, lnf_b = 0, out_w = 0, out_b = 0;
    std::vector<LayerOffsets> layers;
    std::size_t total = 0;
};

Layout make_layout(const ModelConfig& c) {
    Layout layout;
    auto add = [&](const std::string& name, std::vector<std::uint64_t> dims) -> std::size_t {
        std::size_t size = 1;
        for (std::uint64_t d : dims) {
            size *= static_cast<std::size_t>(d);
        }
        const std::size_t offset = layout.total;
        layout.specs.push_back({name, std::move(dims), offset, size});
        layout.total += size;
        return offset;
    };
    const auto v = static_cast<std::uint64_t>(c.vocab_size);
    const auto d = static_cast<std::uint64_t>(c.model_dim);
    const auto f = static_cast<std::uint64_t>(c.ff_dim);
    layout.tok_emb = add("tok_emb", {v, d});
    layout.pos_emb = add("pos_emb", {static_cast<std::uint64_t>(c.max_len), d});
    for (int l = 0; l < c.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        LayerOffsets lo;
        lo.ln1_g = add(p + "ln1_g", {d});
        lo.ln1_b = add(p + "ln1_b", {d});
        lo.wq = add(p + "wq", {d, d});
        lo.bq = add(p + "bq", {d});
        lo.wk = add(p + "wk", {d, d});
        lo.bk = add(p + "bk", {d});
        lo.wv = add(p + "wv", {d, d});
        lo.bv = add(p + "bv", {d});
        lo.wo = add(p + "wo", {d, d});
        lo.bo = add(p + "bo", {d});
        lo.ln2_g = add(p + "ln2_g", {d});
        lo.ln2_b = add(p + "ln2_b", {d});
        lo.w1 = add(p + "w1", {d, f});
        lo.b1 = add(p + "b1", {f});
        lo.w2 = add(p + "w2", {f, d});
        lo.b2 = add(p + "b2", {d});
        layout.layers.push_back(lo);
    }
    layout.lnf_g = add("lnf_g", {d});
    layout.lnf_b = add("lnf_b", {d});
    layout.out_w = add("out_w", {d, v});
    layout.out_b = add("out_b", {v});
    return layout;
}

void validate_config(const ModelConfig& c) {
    if (c.layers < 1 || c.heads < 1 || c.model_dim < 1 || c.ff_dim < 1 || c.max_len < 1 ||
        c.vocab_size < 1) {
        throw std::invalid_argument("model config: all dimensions must be positive");
    }
    if (c.model_dim % c.heads != 0) {
        throw std::invalid_argument("model config: model_dim " + std::to_string(c.model_dim) +
                                    " not divisible by heads " + std::to_string(c.heads));
    }
    if (!(c.dropout >= 0.0 && c.dropout < 1.0)) {
        throw std::invalid_argument("model config: dropout must lie in [0,1)");
    }
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

struct LayerActs {
    std::vector<double> ln1_mean, ln1_rstd, ln1_out;
    std::vector<double> q, k, v;
    std::vector<double> att_probs;  // B*H*T*T
    std::vector<double> att_ctx;
    std::vector<double> proj;
    std::vector<double> res1;
    std::vector<double> ln2_mean, ln2_rstd, ln2_out;
    std::vector<double> ff_pre, ff_act, ff_out;
    std::vector<double> res2;
    std::vector<double> drop_proj, drop_ff;  // multipliers (train mode)
};

struct Workspace {
    int B = 0, T = 0;
    std::vector<double> emb;
    std::vector<double> drop_emb;
    std::vector<LayerActs> layers;
    std::vector<double> lnf_mean, lnf_rstd, lnf_out;
    std::vector<double> logits;
    std::vector<double> lse;  // per labeled row, logsumexp cache (all rows)

    // backward scratch
    std::vector<double> dlogits;
    std::vector<double> d_stream, d_res1, d_ln_out, d_ctx, dq, dk, dv;
    std::vector<double> d_ff1, d_ff2;

    void resize(const ModelConfig& c, int batch, int seq, bool train_mode, bool with_grad) {
        B = batch;
        T = seq;
        const std::size_t btd = static_cast<std::size_t>(B) * T * c.model_dim;
        const std::size_t btf = static_cast<std::size_t>(B) * T * c.ff_dim;
        const std::size_t bt = static_cast<std::size_t>(B) * T;
        const std::size_t btv = bt * c.vocab_size;
        const std::size_t bhtt = static_cast<std::size_t>(B) * c.heads * T * T;
        emb.assign(btd, 0.0);
        layers.resize(c.layers);
        for (auto& l : layers) {
            l.ln1_mean.assign(bt, 0.0);
            l.ln1_rstd.assign(bt, 0.0);
            l.ln1_out.assign(btd, 0.0);
            l.q.assign(btd, 0.0);
            l.k.assign(btd, 0.0);
            l.v.assign(btd, 0.0);
            l.att_probs.assign(bhtt, 0.0);
            l.att_ctx.assign(btd, 0.0);
            l.proj.assign(btd, 0.0);
            l.res1.assign(btd, 0.0);
            l.ln2_mean.assign(bt, 0.0);
            l.ln2_rstd.assign(bt, 0.0);
            l.ln2_out.assign(btd, 0.0);
            l.ff_pre.assign(btf, 0.0);
            l.ff_act.assign(btf, 0.0);
            l.ff_out.assign(btd, 0.0);
            l.res2.assign(btd, 0.0);
            if (train_mode) {
                l.drop_proj.assign(btd, 1.0);
                l.drop_ff.assign(btd, 1.0);
            }
        }
        if (train_mode) {
            drop_emb.assign(btd, 1.0);
        }
        lnf_mean.assign(bt, 0.0);
        lnf_rstd.assign(bt, 0.0);
        lnf_out.assign(btd, 0.0);
        logits.assign(btv, 0.0);
        lse.assign(bt, 0.0);
        if (with_grad) {
            dlogits.assign(btv, 0.0);
            d_stream.assign(btd, 0.0);
            d_res1.assign(btd, 0.0);
            d_ln_out.assign(btd, 0.0);
            d_ctx.assign(btd, 0.0);
            dq.assign(btd, 0.0);
            dk.assign(btd, 0.0);
            dv.assign(btd, 0.0);
            d_ff1.assign(btf, 0.0);
            d_ff2.assign(btf, 0.0);
        }
    }
};

void attention_forward(LayerActs& acts, int B, int T, int H, int d) {
    const int hd = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> scores(static_cast<std::size_t>(T) * T);
    for (int b = 0; b < B; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * T * d;
        for (int h = 0; h < H; ++h) {
            const int hoff = h * hd;
            double* probs =
                acts.att_probs.data() +
                (static_cast<std::size_t>(b) * H + h) * static_cast<std::size_t>(T) * T;
            for (int i = 0; i < T; ++i) {
                const double* qi = acts.q.data() + base + static_cast<std::size_t>(i) * d + hoff;
                double row_max = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < T; ++j) {
                    const double* kj =
                        acts.k.data() + base + static_cast<std::size_t>(j) * d + hoff;
                    double s = 0.0;
                    for (int c = 0; c < hd; ++c) {
                        s += qi[c] * kj[c];
                    }
                    s *= scale;
                    scores[static_cast<std::size_t>(i) * T + j] = s;
                    row_max = std::max(row_max, s);
                }
                double denom = 0.0;
                for (int j = 0; j < T; ++j) {
                    const double e = std::exp(scores[static_cast<std::size_t>(i) * T + j] - row_max);
                    probs[static_cast<std::size_t>(i) * T + j] = e;
                    denom += e;
                }
                const double inv = 1.0 / denom;
                double* ctx = acts.att_ctx.data() + base + static_cast<std::size_t>(i) * d + hoff;
                std::fill(ctx, ctx + hd, 0.0);
                for (int j = 0; j < T; ++j) {
                    const double p = probs[static_cast<std::size_t>(i) * T + j] * inv;
                    probs[static_cast<std::size_t>(i) * T + j] = p;
                    const double* vj =
                        acts.v.data() + base + static_cast<std::size_t>(j) * d + hoff;
                    for (int c = 0; c < hd; ++c) {
                        ctx[c] += p * vj[c];
                    }
                }
            }
        }
    }
}

// d_ctx -> dq/dk/dv (accumulated)
void attention_backward(Workspace& ws, const LayerActs& acts, int B, int T, int H, int d) {
    const int hd = d / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> dprobs(static_cast<std::size_t>(T) * T);
    std::vector<double> dscores(static_cast<std::size_t>(T) * T);
    for (int b = 0; b < B; ++b) {
        const std::size_t base = static_cast<std::size_t>(b) * T * d;
        for (int h = 0; h < H; ++h) {
            const int hoff = h * hd;
            const double* probs =
                acts.att_probs.data() +
                (static_cast<std::size_t>(b) * H + h) * static_cast<std::size_t>(T) * T;
            // dprobs and dv
            for (int i = 0; i < T; ++i) {
                const double* dctx =
                    ws.d_ctx.data() + base + static_cast<std::size_t>(i) * d + hoff;
                for (int j = 0; j < T; ++j) {
                    const double* vj =
                        acts.v.data() + base + static_cast<std::size_t>(j) * d + hoff;
                    double acc = 0.0;
                    for (int c = 0; c < hd; ++c) {
                        acc += dctx[c] * vj[c];
                    }
                    dprobs[static_cast<std::size_t>(i) * T + j] = acc;
                }
            }
            for (int j = 0; j < T; ++j) {
                double* dvj = ws.dv.data() + base + static_cast<std::size_t>(j) * d + hoff;
                for (int i = 0; i < T; ++i) {
                    const double p = probs[static_cast<std::size_t>(i) * T + j];
                    const double* dctx =
                        ws.d_ctx.data() + base + static_cast<std::size_t>(i) * d + hoff;
                    for (int c = 0; c < hd; ++c) {
                        dvj[c] += p * dctx[c];
                    }
                }
            }
            // softmax backward
            for (int i = 0; i < T; ++i) {
                double dot = 0.0;
                for (int j = 0; j < T; ++j) {
                    dot += probs[static_cast<std::size_t>(i) * T + j] *
                           dprobs[static_cast<std::size_t>(i) * T + j];
                }
                for (int j = 0; j < T; ++j) {
                    const std::size_t ij = static_cast<std::size_t>(i) * T + j;
                    dscores[ij] = probs[ij] * (dprobs[ij] - dot) * scale;
                }
            }
            // dq/dk
            for (int i = 0; i < T; ++i) {
                double* dqi = ws.dq.data() + base + static_cast<std::size_t>(i) * d + hoff;
                for (int j = 0; j < T; ++j) {
                    const double s = dscores[static_cast<std::size_t>(i) * T + j];
                    const double* kj =
                        acts.k.data() + base + static_cast<std::size_t>(j) * d + hoff;
                    for (int c = 0; c < hd; ++c) {
                        dqi[c] += s * kj[c];
                    }
                }
            }
            for (int j = 0; j < T; ++j) {
                double* dkj = ws.dk.data() + base + static_cast<std::size_t>(j) * d + hoff;
                for (int i = 0; i < T; ++i) {
                    const double s = dscores[static_cast<std::size_t>(i) * T + j];
                    const double* qi =
                        acts.q.data() + base + static_cast<std::size_t>(i) * d + hoff;
                    for (int c = 0; c < hd; ++c) {
                        dkj[c] += s * qi[c];
                    }
                }
            }
        }
    }
}

void apply_dropout(std::vector<double>& mask, double* data, std::size_t n, double dropout,
                   Rng& rng) {
    const double keep = 1.0 - dropout;
    const double inv_keep = 1.0 / keep;
    for (std::size_t i = 0; i < n; ++i) {
        const double m = rng.uniform01() < keep ? inv_keep : 0.0;
        mask[i] = m;
        data[i] *= m;
    }
}

std::uint64_t fnv1a(std::uint64_t hash, const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
        hash ^= p[i];
        hash *= 0x100000001B3ull;
    }
    return hash;
}

}  // namespace

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Batch Batch::single(const std::vector<TokenId>& sequence) {
    Batch b;
    b.batch = 1;
    b.seq_len = static_cast<int>(sequence.size());
    b.ids = sequence;
    return b;
}

void Model::refresh_mirror() {
    params_d_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        params_d_[i] = static_cast<double>(params_[i]);
    }
}

void Model::set_param(std::size_t i, float value) {
    params_[i] = value;
    params_d_[i] = static_cast<double>(value);
}

Model Model::init(const ModelConfig& config) {
    validate_config(config);
    Layout layout = make_layout(config);
    Model model;
    model.config_ = config;
    model.specs_ = layout.specs;
    model.params_.assign(layout.total, 0.0f);

    Rng rng(config.seed);
    for (const TensorSpec& spec : model.specs_) {
        float* data = model.params_.data() + spec.offset;
        const bool is_gamma = spec.name.size() >= 2 &&
                              spec.name.compare(spec.name.size() - 2, 2, "_g") == 0;
        if (is_gamma) {
            std::fill(data, data + spec.size, 1.0f);
        } else if (spec.dims.size() == 1) {
            std::fill(data, data + spec.size, 0.0f);  // biases and ln shifts
        } else if (spec.name == "tok_emb" || spec.name == "pos_emb") {
            // unit-variance rows keep the first layernorm well away from its epsilon
            const double scale = std::sqrt(3.0 / config.model_dim);
            for (std::size_t i = 0; i < spec.size; ++i) {
                data[i] = static_cast<float>((rng.uniform01() * 2.0 - 1.0) * scale);
            }
        } else {
            const double fan_in = static_cast<double>(spec.dims[0]);
            const double fan_out = static_cast<double>(spec.dims[1]);
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            for (std::size_t i = 0; i < spec.size; ++i) {
                data[i] = static_cast<float>((rng.uniform01() * 2.0 - 1.0) * limit);
            }
        }
    }
    model.refresh_mirror();
    return model;
}

struct ModelOps {
    // Full forward pass. Returns mean masked loss when labels given (else 0).
    static double run_forward(const Model& m, Workspace& ws, const Batch& batch, bool train_mode,
                              Rng* dropout_rng) {
        const ModelConfig& c = m.config_;
        const Layout layout = make_layout(c);
        const double* P = m.params_d_.data();
        const int B = batch.batch;
        const int T = batch.seq_len;
        const int d = c.model_dim;
        const int rows = B * T;

        if (T > c.max_len) {
            throw std::invalid_argument("sequence length " + std::to_string(T) +
                                        " exceeds max_len " + std::to_string(c.max_len));
        }
        if (batch.ids.size() != static_cast<std::size_t>(rows)) {
            throw std::invalid_argument("batch ids size does not match batch*seq_len");
        }

        // embeddings
        for (int r = 0; r < rows; ++r) {
            const TokenId id = batch.ids[r];
            if (id < 0 || id >= c.vocab_size) {
                throw std::invalid_argument("token id " + std::to_string(id) +
                                            " outside vocabulary of size " +
                                            std::to_string(c.vocab_size));
            }
            const int t = r % T;
            const double* tok = P + layout.tok_emb + static_cast<std::size_t>(id) * d;
            const double* pos = P + layout.pos_emb + static_cast<std::size_t>(t) * d;
            double* out = ws.emb.data() + static_cast<std::size_t>(r) * d;
            for (int i = 0; i < d; ++i) {
                out[i] = tok[i] + pos[i];
            }
        }
        if (train_mode && c.dropout > 0.0) {
            apply_dropout(ws.drop_emb, ws.emb.data(), ws.emb.size(), c.dropout, *dropout_rng);
        }

        const double* x = ws.emb.data();
        for (int l = 0; l < c.layers; ++l) {
            LayerActs& a = ws.layers[l];
            const LayerOffsets& o = layout.layers[l];
            layernorm_forward(a.ln1_out.data(), a.ln1_mean.data(), a.ln1_rstd.data(), x,
                              P + o.ln1_g, P + o.ln1_b, rows, d);
            linear_forward(a.q.data(), a.ln1_out.data(), P + o.wq, P + o.bq, rows, d, d);
            linear_forward(a.k.data(), a.ln1_out.data(), P + o.wk, P + o.bk, rows, d, d);
            linear_forward(a.v.data(), a.ln1_out.data(), P + o.wv, P + o.bv, rows, d, d);
            attention_forward(a, B, T, c.heads, d);
            linear_forward(a.proj.data(), a.att_ctx.data(), P + o.wo, P + o.bo, rows, d, d);
            if (train_mode && c.dropout > 0.0) {
                apply_dropout(a.drop_proj, a.proj.data(), a.proj.size(), c.dropout, *dropout_rng);
            }
            for (std::size_t i = 0; i < a.res1.size(); ++i) {
                a.res1[i] = x[i] + a.proj[i];
            }
            layernorm_forward(a.ln2_out.data(), a.ln2_mean.data(), a.ln2_rstd.data(),
                              a.res1.data(), P + o.ln2_g, P + o.ln2_b, rows, d);
            linear_forward(a.ff_pre.data(), a.ln2_out.data(), P + o.w1, P + o.b1, rows, d,
                           c.ff_dim);
            gelu_forward(a.ff_act.data(), a.ff_pre.data(), a.ff_pre.size());
            linear_forward(a.ff_out.data(), a.ff_act.data(), P + o.w2, P + o.b2, rows, c.ff_dim,
                           d);
            if (train_mode && c.dropout > 0.0) {
                apply_dropout(a.drop_ff, a.ff_out.data(), a.ff_out.size(), c.dropout,
                              *dropout_rng);
            }
            for (std::size_t i = 0; i < a.res2.size(); ++i) {
                a.res2[i] = a.res1[i] + a.ff_out[i];
            }
            x = a.res2.data();
        }

        layernorm_forward(ws.lnf_out.data(), ws.lnf_mean.data(), ws.lnf_rstd.data(), x,
                          P + layout.lnf_g, P + layout.lnf_b, rows, d);
        linear_forward(ws.logits.data(), ws.lnf_out.data(), P + layout.out_w, P + layout.out_b,
                       rows, d, c.vocab_size);

        // logsumexp per row (cached for log-probs and for loss backward)
        const int V = c.vocab_size;
        for (int r = 0; r < rows; ++r) {
            const double* row = ws.logits.data() + static_cast<std::size_t>(r) * V;
            double row_max = row[0];
            for (int v = 1; v < V; ++v) {
                row_max = std::max(row_max, row[v]);
            }
            double denom = 0.0;
            for (int v = 0; v < V; ++v) {
                denom += std::exp(row[v] - row_max);
            }
            ws.lse[r] = row_max + std::log(denom);
        }

        if (batch.labels.empty()) {
            return 0.0;
        }
        if (batch.labels.size() != static_cast<std::size_t>(rows)) {
            throw std::invalid_argument("labels size does not match batch*seq_len");
        }
        double loss = 0.0;
        int count = 0;
        for (int r = 0; r < rows; ++r) {
            const TokenId label = batch.labels[r];
            if (label == kIgnoreLabel) {
                continue;
            }
            if (label < 0 || label >= V) {
                throw std::invalid_argument("label id " + std::to_string(label) +
                                            " outside vocabulary");
            }
            loss += ws.lse[r] - ws.logits[static_cast<std::size_t>(r) * V + label];
            ++count;
        }
        return count > 0 ? loss / count : 0.0;
    }

    // Backward through the cached forward pass; grad must be zero-initialized
    // with layout size. train_mode replays the stored dropout masks.
    static void run_backward(const Model& m, Workspace& ws, const Batch& batch, bool train_mode,
                             std::vector<double>& grad) {
        const ModelConfig& c = m.config_;
        const Layout layout = make_layout(c);
        const double* P = m.params_d_.data();
        double* G = grad.data();
        const int B = batch.batch;
        const int T = batch.seq_len;
        const int d = c.model_dim;
        const int V = c.vocab_size;
        const int rows = B * T;

        int count = 0;
        for (int r = 0; r < rows; ++r) {
            if (batch.labels[r] != kIgnoreLabel) {
                ++count;
            }
        }
        if (count == 0) {
            return;  // no masked positions: zero gradient
        }
        const double inv_count = 1.0 / count;

        std::fill(ws.dlogits.begin(), ws.dlogits.end(), 0.0);
        for (int r = 0; r < rows; ++r) {
            const TokenId label = batch.labels[r];
            if (label == kIgnoreLabel) {
                continue;
            }
            const double* row = ws.logits.data() + static_cast<std::size_t>(r) * V;
            double* drow = ws.dlogits.data() + static_cast<std::size_t>(r) * V;
            const double lse = ws.lse[r];
            for (int v = 0; v < V; ++v) {
                drow[v] = std::exp(row[v] - lse) * inv_count;
            }
            drow[label] -= inv_count;
        }

        // output projection and final layernorm
        std::fill(ws.d_stream.begin(), ws.d_stream.end(), 0.0);
        std::fill(ws.d_ln_out.begin(), ws.d_ln_out.end(), 0.0);
        linear_backward_params(G + layout.out_w, G + layout.out_b, ws.dlogits.data(),
                               ws.lnf_out.data(), rows, d, V);
        linear_backward_input(ws.d_ln_out.data(), ws.dlogits.data(), P + layout.out_w, rows, d, V);
        const double* x_top =
            c.layers > 0 ? ws.layers[c.layers - 1].res2.data() : ws.emb.data();
        layernorm_backward(ws.d_stream.data(), G + layout.lnf_g, G + layout.lnf_b,
                           ws.d_ln_out.data(), x_top, P + layout.lnf_g, ws.lnf_mean.data(),
                           ws.lnf_rstd.data(), rows, d);

        for (int l = c.layers - 1; l >= 0; --l) {
            LayerActs& a = ws.layers[l];
            const LayerOffsets& o = layout.layers[l];
            const double* x_in = l > 0 ? ws.layers[l - 1].res2.data() : ws.emb.data();

            // res2 = res1 + dropout(ff_out)
            std::copy(ws.d_stream.begin(), ws.d_stream.end(), ws.d_res1.begin());
            std::fill(ws.d_ff2.begin(), ws.d_ff2.end(), 0.0);
            {
                // d ff_out (through dropout), then ff stack
                std::vector<double>& d_ff_out = ws.d_ctx;  // reuse as B*T*d scratch
                std::copy(ws.d_stream.begin(), ws.d_stream.end(), d_ff_out.begin());
                if (train_mode && c.dropout > 0.0) {
                    for (std::size_t i = 0; i < d_ff_out.size(); ++i) {
                        d_ff_out[i] *= a.drop_ff[i];
                    }
                }
                linear_backward_params(G + o.w2, G + o.b2, d_ff_out.data(), a.ff_act.data(), rows,
                                       c.ff_dim, d);
                linear_backward_input(ws.d_ff2.data(), d_ff_out.data(), P + o.w2, rows, c.ff_dim,
                                      d);
            }
            gelu_backward(ws.d_ff1.data(), ws.d_ff2.data(), a.ff_pre.data(), ws.d_ff1.size());
            std::fill(ws.d_ln_out.begin(), ws.d_ln_out.end(), 0.0);
            linear_backward_params(G + o.w1, G + o.b1, ws.d_ff1.data(), a.ln2_out.data(), rows, d,
                                   c.ff_dim);
            linear_backward_input(ws.d_ln_out.data(), ws.d_ff1.data(), P + o.w1, rows, d,
                                  c.ff_dim);
            layernorm_backward(ws.d_res1.data(), G + o.ln2_g, G + o.ln2_b, ws.d_ln_out.data(),
                               a.res1.data(), P + o.ln2_g, a.ln2_mean.data(), a.ln2_rstd.data(),
                               rows, d);

            // res1 = x_in + dropout(proj)
            std::copy(ws.d_res1.begin(), ws.d_res1.end(), ws.d_stream.begin());  // d x_in part 1
            std::fill(ws.d_ctx.begin(), ws.d_ctx.end(), 0.0);
            {
                std::vector<double>& d_proj = ws.dq;  // reuse before dq accumulation begins
                std::copy(ws.d_res1.begin(), ws.d_res1.end(), d_proj.begin());
                if (train_mode && c.dropout > 0.0) {
                    for (std::size_t i = 0; i < d_proj.size(); ++i) {
                        d_proj[i] *= a.drop_proj[i];
                    }
                }
                linear_backward_params(G + o.wo, G + o.bo, d_proj.data(), a.att_ctx.data(), rows,
                                       d, d);
                linear_backward_input(ws.d_ctx.data(), d_proj.data(), P + o.wo, rows, d, d);
            }
            std::fill(ws.dq.begin(), ws.dq.end(), 0.0);
            std::fill(ws.dk.begin(), ws.dk.end(), 0.0);
            std::fill(ws.dv.begin(), ws.dv.end(), 0.0);
            attention_backward(ws, a, B, T, c.heads, d);

            std::fill(ws.d_ln_out.begin(), ws.d_ln_out.end(), 0.0);
            linear_backward_params(G + o.wq, G + o.bq, ws.dq.data(), a.ln1_out.data(), rows, d, d);
            linear_backward_input(ws.d_ln_out.data(), ws.dq.data(), P + o.wq, rows, d, d);
            linear_backward_params(G + o.wk, G + o.bk, ws.dk.data(), a.ln1_out.data(), rows, d, d);
            linear_backward_input(ws.d_ln_out.data(), ws.dk.data(), P + o.wk, rows, d, d);
            linear_backward_params(G + o.wv, G + o.bv, ws.dv.data(), a.ln1_out.data(), rows, d, d);
            linear_backward_input(ws.d_ln_out.data(), ws.dv.data(), P + o.wv, rows, d, d);
            layernorm_backward(ws.d_stream.data(), G + o.ln1_g, G + o.ln1_b, ws.d_ln_out.data(),
                               x_in, P + o.ln1_g, a.ln1_mean.data(), a.ln1_rstd.data(), rows, d);
        }

        // embedding backward
        if (train_mode && c.dropout > 0.0) {
            for (std::size_t i = 0; i < ws.d_stream.size(); ++i) {
                ws.d_stream[i] *= ws.drop_emb[i];
            }
        }
        for (int r = 0; r < rows; ++r) {
            const TokenId id = batch.ids[r];
            const int t = r % T;
            const double* dsrc = ws.d_stream.data() + static_cast<std::size_t>(r) * d;
            double* dtok = G + layout.tok_emb + static_cast<std::size_t>(id) * d;
            double* dpos = G + layout.pos_emb + static_cast<std::size_t>(t) * d;
            for (int i = 0; i < d; ++i) {
                dtok[i] += dsrc[i];
                dpos[i] += dsrc[i];
            }
        }
    }
};

LogProbs Model::forward(const Batch& batch) const {
    Workspace ws;
    ws.resize(config_, batch.batch, batch.seq_len, false, false);
    Batch unlabeled = batch;
    unlabeled.labels.clear();
    ModelOps::run_forward(*this, ws, unlabeled, false, nullptr);

    LogProbs out;
    out.batch = batch.batch;
    out.seq_len = batch.seq_len;
    out.vocab = config_.vocab_size;
    out.data.resize(ws.logits.size());
    const int rows = batch.batch * batch.seq_len;
    for (int r = 0; r < rows; ++r) {
        const double lse = ws.lse[r];
        const double* src = ws.logits.data() + static_cast<std::size_t>(r) * config_.vocab_size;
        double* dst = out.data.data() + static_cast<std::size_t>(r) * config_.vocab_size;
        for (int v = 0; v < config_.vocab_size; ++v) {
            dst[v] = src[v] - lse;
        }
    }
    return out;
}

std::vector<double> Model::token_distribution(const std::vector<TokenId>& ids, int position) const {
    if (position < 0 || position >= static_cast<int>(ids.size())) {
        throw std::invalid_argument("position " + std::to_string(position) +
                                    " outside sequence of length " + std::to_string(ids.size()));
    }
    const LogProbs lp = forward(Batch::single(ids));
    std::vector<double> probs(config_.vocab_size);
    for (int v = 0; v < config_.vocab_size; ++v) {
        probs[v] = std::exp(lp.at(0, position, v));
    }
    return probs;
}

std::vector<double> Model::final_hidden_at(const Batch& batch, int position) const {
    if (position < 0 || position >= batch.seq_len) {
        throw std::invalid_argument("position outside sequence");
    }
    Workspace ws;
    ws.resize(config_, batch.batch, batch.seq_len, false, false);
    Batch unlabeled = batch;
    unlabeled.labels.clear();
    ModelOps::run_forward(*this, ws, unlabeled, false, nullptr);
    std::vector<double> out(static_cast<std::size_t>(batch.batch) * config_.model_dim);
    for (int b = 0; b < batch.batch; ++b) {
        const double* src = ws.lnf_out.data() +
                            (static_cast<std::size_t>(b) * batch.seq_len + position) *
                                config_.model_dim;
        std::copy(src, src + config_.model_dim,
                  out.begin() + static_cast<std::size_t>(b) * config_.model_dim);
    }
    return out;
}

MlmLossValue Model::mlm_loss(const LogProbs& log_probs, const std::vector<TokenId>& labels) {
    const std::size_t rows = static_cast<std::size_t>(log_probs.batch) * log_probs.seq_len;
    if (labels.size() != rows) {
        throw std::invalid_argument("labels size " + std::to_string(labels.size()) +
                                    " does not match " + std::to_string(rows) + " positions");
    }
    MlmLossValue out;
    double sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const TokenId label = labels[r];
        if (label == kIgnoreLabel) {
            continue;
        }
        if (label < 0 || label >= log_probs.vocab) {
            throw std::invalid_argument("label id " + std::to_string(label) +
                                        " outside vocabulary");
        }
        sum -= log_probs.data[r * log_probs.vocab + label];
        ++out.masked_count;
    }
    out.all_ignored = out.masked_count == 0;
    out.value = out.all_ignored ? 0.0 : sum / out.masked_count;
    return out;
}

double Model::loss_and_grad(const Batch& batch, std::vector<double>& grad) const {
    if (batch.labels.size() != batch.ids.size()) {
        throw std::invalid_argument("loss_and_grad requires labels for every position");
    }
    Workspace ws;
    ws.resize(config_, batch.batch, batch.seq_len, false, true);
    const double loss = ModelOps::run_forward(*this, ws, batch, false, nullptr);
    grad.assign(params_.size(), 0.0);
    ModelOps::run_backward(*this, ws, batch, false, grad);
    return loss;
}

TrainResult Model::train(const std::vector<MaskedPair>& dataset, const Hyper& hyper) {
    if (dataset.empty()) {
        throw std::invalid_argument("train: dataset is empty");
    }
    if (hyper.epochs < 1) {
        throw std::invalid_argument("train: epochs must be >= 1");
    }
    if (hyper.learning_rate < 0.0) {
        throw std::invalid_argument("train: learning rate must be >= 0");
    }
    if (hyper.batch_size < 1) {
        throw std::invalid_argument("train: batch size must be >= 1");
    }
    const int T = static_cast<int>(dataset.front().input_ids.size());
    for (const MaskedPair& pair : dataset) {
        if (static_cast<int>(pair.input_ids.size()) != T ||
            pair.labels.size() != pair.input_ids.size()) {
            throw std::invalid_argument("train: all sequences must share one length");
        }
    }

    std::vector<double> grad(params_.size(), 0.0);
    std::vector<double> adam_m(params_.size(), 0.0);
    std::vector<double> adam_v(params_.size(), 0.0);
    Workspace ws;

    Rng rng(hyper.seed);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    TrainResult result;
    result.data_fingerprint = dataset_fingerprint(dataset);
    std::uint64_t step = 0;
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int epoch_steps = 0;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            const int B =
                static_cast<int>(std::min<std::size_t>(hyper.batch_size, order.size() - start));
            Batch batch;
            batch.batch = B;
            batch.seq_len = T;
            batch.ids.resize(static_cast<std::size_t>(B) * T);
            batch.labels.resize(static_cast<std::size_t>(B) * T);
            for (int b = 0; b < B; ++b) {
                const MaskedPair& pair = dataset[order[start + b]];
                std::copy(pair.input_ids.begin(), pair.input_ids.end(),
                          batch.ids.begin() + static_cast<std::size_t>(b) * T);
                std::copy(pair.labels.begin(), pair.labels.end(),
                          batch.labels.begin() + static_cast<std::size_t>(b) * T);
            }

            ws.resize(config_, B, T, true, true);
            const double loss = ModelOps::run_forward(*this, ws, batch, true, &rng);
            ++step;
            if (!std::isfinite(loss)) {
                throw std::runtime_error("training diverged at step " + std::to_string(step) +
                                         ": loss is not finite");
            }
            std::fill(grad.begin(), grad.end(), 0.0);
            ModelOps::run_backward(*this, ws, batch, true, grad);

            const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(step));
            for (std::size_t i = 0; i < params_.size(); ++i) {
                const double g = grad[i];
                adam_m[i] = kAdamBeta1 * adam_m[i] + (1.0 - kAdamBeta1) * g;
                adam_v[i] = kAdamBeta2 * adam_v[i] + (1.0 - kAdamBeta2) * g * g;
                const double m_hat = adam_m[i] / bc1;
                const double v_hat = adam_v[i] / bc2;
                const double updated =
                    params_d_[i] - hyper.learning_rate * m_hat / (std::sqrt(v_hat) + kAdamEps);
                params_[i] = static_cast<float>(updated);
                params_d_[i] = static_cast<double>(params_[i]);
            }
            epoch_loss += loss;
            ++epoch_steps;
        }
        result.epoch_mean_loss.push_back(epoch_loss / epoch_steps);
    }
    result.steps = step;
    return result;
}

Checkpoint Model::to_checkpoint(std::uint64_t step_count, std::uint64_t data_fingerprint) const {
    Checkpoint ckpt;
    ckpt.config = config_;
    ckpt.step_count = step_count;
    ckpt.data_fingerprint = data_fingerprint;
    ckpt.tensors.reserve(specs_.size());
    for (const TensorSpec& spec : specs_) {
        NamedTensor tensor;
        tensor.name = spec.name;
        tensor.dims = spec.dims;
        tensor.data.assign(params_.begin() + spec.offset,
                           params_.begin() + spec.offset + spec.size);
        ckpt.tensors.push_back(std::move(tensor));
    }
    return ckpt;
}

Model Model::from_checkpoint(const Checkpoint& checkpoint) {
    validate_config(checkpoint.config);
    Layout layout = make_layout(checkpoint.config);
    Model model;
    model.config_ = checkpoint.config;
    model.specs_ = layout.specs;
    model.params_.assign(layout.total, 0.0f);
    if (checkpoint.tensors.size() != layout.specs.size()) {
        throw std::runtime_error("checkpoint holds " + std::to_string(checkpoint.tensors.size()) +
                                 " tensors, model expects " + std::to_string(layout.specs.size()));
    }
    for (std::size_t i = 0; i < layout.specs.size(); ++i) {
        const TensorSpec& spec = layout.specs[i];
        const NamedTensor& tensor = checkpoint.tensors[i];
        if (tensor.name != spec.name || tensor.dims != spec.dims ||
            tensor.data.size() != spec.size) {
            throw std::runtime_error("checkpoint tensor '" + tensor.name +
                                     "' does not match expected '" + spec.name + "'");
        }
        std::copy(tensor.data.begin(), tensor.data.end(), model.params_.begin() + spec.offset);
    }
    model.refresh_mirror();
    return model;
}

std::uint64_t dataset_fingerprint(const std::vector<MaskedPair>& dataset) {
    std::uint64_t hash = 0xCBF29CE484222325ull;
    for (const MaskedPair& pair : dataset) {
        hash = fnv1a(hash, pair.input_ids.data(), pair.input_ids.size() * sizeof(TokenId));
        hash = fnv1a(hash, pair.labels.data(), pair.labels.size() * sizeof(TokenId));
    }
    return hash;
}

}  // namespace mdma
