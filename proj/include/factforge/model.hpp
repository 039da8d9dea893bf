#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <vector>

#include "factforge/errors.hpp"
#include "factforge/kernels.hpp"
#include "factforge/rng.hpp"

namespace factforge {

struct ModelConfig {
    int vocab_size = 256;
    int hidden_dim = 64;
    int num_layers = 4;
    int num_heads = 4;
    int ffn_dim = 256;
    int max_seq_len = 256;
    uint64_t seed = 0;

    void validate() const {
        if (vocab_size <= 0 || hidden_dim <= 0 || num_layers <= 0 || num_heads <= 0 ||
            ffn_dim <= 0 || max_seq_len <= 0) {
            throw ConfigError("model dimensions must be positive");
        }
        if (hidden_dim % num_heads != 0) {
            throw ConfigError("hidden_dim must be divisible by num_heads");
        }
    }
};

struct PrefixConfig {
    int n = 1; // virtual tokens
    int d = 1; // layers spanned, counted from the lowest layer

    void validate(const ModelConfig& mc) const {
        if (n < 1) throw ConfigError("prefix length n must be >= 1");
        if (d < 1 || d > mc.num_layers) {
            throw ConfigError("prefix depth d must be in [1, num_layers]");
        }
    }
};

struct LoraConfig {
    int rank = 8;
    double alpha = 8.0;
    bool target_query = true;
    bool target_value = true;

    void validate() const {
        if (rank < 1) throw ConfigError("lora rank must be >= 1");
        if (!target_query && !target_value) {
            throw ConfigError("lora must target at least one projection");
        }
    }
};

inline long long prefix_param_count(const ModelConfig& mc, const PrefixConfig& pc) {
    pc.validate(mc);
    return 2LL * pc.d * pc.n * mc.hidden_dim;
}

inline long long lora_param_count(const ModelConfig& mc, const LoraConfig& lc) {
    lc.validate();
    int targets = (lc.target_query ? 1 : 0) + (lc.target_value ? 1 : 0);
    return static_cast<long long>(targets) * 2LL * mc.hidden_dim * lc.rank * mc.num_layers;
}

// Learned attention key/value vectors, [d][n][hidden_dim] each.
template <typename Real>
struct PrefixParams {
    int d = 0, n = 0, h = 0;
    std::vector<Real> keys;
    std::vector<Real> values;

    static PrefixParams zeros(const ModelConfig& mc, const PrefixConfig& pc) {
        pc.validate(mc);
        PrefixParams p;
        p.d = pc.d;
        p.n = pc.n;
        p.h = mc.hidden_dim;
        p.keys.assign(static_cast<size_t>(pc.d) * pc.n * mc.hidden_dim, Real(0));
        p.values = p.keys;
        return p;
    }

    static PrefixParams init(const ModelConfig& mc, const PrefixConfig& pc,
                             uint64_t seed, double std_dev = 0.5) {
        PrefixParams p = zeros(mc, pc);
        Rng rng = Rng(seed).split("prefix-init");
        for (Real& x : p.keys) x = static_cast<Real>(rng.next_gaussian() * std_dev);
        for (Real& x : p.values) x = static_cast<Real>(rng.next_gaussian() * std_dev);
        return p;
    }

    size_t param_count() const { return keys.size() + values.size(); }

    Real* key(int layer, int tok) {
        return keys.data() + (static_cast<size_t>(layer) * n + tok) * h;
    }
    const Real* key(int layer, int tok) const {
        return keys.data() + (static_cast<size_t>(layer) * n + tok) * h;
    }
    Real* value(int layer, int tok) {
        return values.data() + (static_cast<size_t>(layer) * n + tok) * h;
    }
    const Real* value(int layer, int tok) const {
        return values.data() + (static_cast<size_t>(layer) * n + tok) * h;
    }
};

// Per-layer A/B factors for the targeted projections. A is [rank][h],
// B is [h][rank]; B starts at zero so the initial delta vanishes.
template <typename Real>
struct LoraParams {
    LoraConfig cfg;
    int layers = 0, h = 0;
    std::vector<Real> a_q, b_q, a_v, b_v; // [L][r][h] and [L][h][r]

    static LoraParams zeros(const ModelConfig& mc, const LoraConfig& lc) {
        lc.validate();
        LoraParams p;
        p.cfg = lc;
        p.layers = mc.num_layers;
        p.h = mc.hidden_dim;
        size_t sz = static_cast<size_t>(mc.num_layers) * lc.rank * mc.hidden_dim;
        if (lc.target_query) {
            p.a_q.assign(sz, Real(0));
            p.b_q.assign(sz, Real(0));
        }
        if (lc.target_value) {
            p.a_v.assign(sz, Real(0));
            p.b_v.assign(sz, Real(0));
        }
        return p;
    }

    static LoraParams init(const ModelConfig& mc, const LoraConfig& lc, uint64_t seed,
                           double std_dev = 0.02) {
        LoraParams p = zeros(mc, lc);
        Rng rng = Rng(seed).split("lora-init");
        for (Real& x : p.a_q) x = static_cast<Real>(rng.next_gaussian() * std_dev);
        for (Real& x : p.a_v) x = static_cast<Real>(rng.next_gaussian() * std_dev);
        return p;
    }

    size_t param_count() const {
        return a_q.size() + b_q.size() + a_v.size() + b_v.size();
    }

    Real scale() const { return static_cast<Real>(cfg.alpha / cfg.rank); }

    Real* a(char target, int layer) {
        auto& v = target == 'q' ? a_q : a_v;
        return v.data() + static_cast<size_t>(layer) * cfg.rank * h;
    }
    const Real* a(char target, int layer) const {
        return const_cast<LoraParams*>(this)->a(target, layer);
    }
    Real* b(char target, int layer) {
        auto& v = target == 'q' ? b_q : b_v;
        return v.data() + static_cast<size_t>(layer) * h * cfg.rank;
    }
    const Real* b(char target, int layer) const {
        return const_cast<LoraParams*>(this)->b(target, layer);
    }
};

namespace detail {

// y[t] = W x[t], W is [out][in] row-major
template <typename Real>
void linear_forward(const Real* w, const Real* x, Real* y, int rows, int in, int out) {
    for (int t = 0; t < rows; ++t) {
        const Real* xt = x + static_cast<size_t>(t) * in;
        Real* yt = y + static_cast<size_t>(t) * out;
        for (int o = 0; o < out; ++o) {
            yt[o] = kernels::dot(w + static_cast<size_t>(o) * in, xt, in);
        }
    }
}

// dx[t] += W^T dy[t]
template <typename Real>
void linear_backward_input(const Real* w, const Real* dy, Real* dx, int rows, int in,
                           int out) {
    for (int t = 0; t < rows; ++t) {
        const Real* dyt = dy + static_cast<size_t>(t) * out;
        Real* dxt = dx + static_cast<size_t>(t) * in;
        for (int o = 0; o < out; ++o) {
            kernels::axpy(dyt[o], w + static_cast<size_t>(o) * in, dxt, in);
        }
    }
}

template <typename Real>
void layernorm_forward(const Real* x, const Real* g, const Real* b, Real* y, Real* mean,
                       Real* rstd, int rows, int h) {
    constexpr Real eps = Real(1e-5);
    for (int t = 0; t < rows; ++t) {
        const Real* xt = x + static_cast<size_t>(t) * h;
        Real* yt = y + static_cast<size_t>(t) * h;
        Real mu = kernels::sum(xt, h) / h;
        Real var = Real(0);
        for (int i = 0; i < h; ++i) {
            Real c = xt[i] - mu;
            var += c * c;
        }
        var /= h;
        Real rs = Real(1) / std::sqrt(var + eps);
        mean[t] = mu;
        rstd[t] = rs;
        for (int i = 0; i < h; ++i) yt[i] = (xt[i] - mu) * rs * g[i] + b[i];
    }
}

// dx[t] += layernorm backward of dy[t]
template <typename Real>
void layernorm_backward_input(const Real* x, const Real* g, const Real* mean,
                              const Real* rstd, const Real* dy, Real* dx, int rows,
                              int h) {
    for (int t = 0; t < rows; ++t) {
        const Real* xt = x + static_cast<size_t>(t) * h;
        const Real* dyt = dy + static_cast<size_t>(t) * h;
        Real* dxt = dx + static_cast<size_t>(t) * h;
        Real mu = mean[t], rs = rstd[t];
        Real sum_dyg = Real(0), sum_dyg_xhat = Real(0);
        for (int i = 0; i < h; ++i) {
            Real xhat = (xt[i] - mu) * rs;
            Real dyg = dyt[i] * g[i];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
        }
        Real inv_h = Real(1) / h;
        for (int i = 0; i < h; ++i) {
            Real xhat = (xt[i] - mu) * rs;
            Real dyg = dyt[i] * g[i];
            dxt[i] += rs * (dyg - sum_dyg * inv_h - xhat * sum_dyg_xhat * inv_h);
        }
    }
}

template <typename Real>
Real gelu(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x * Real(M_SQRT1_2)));
}

template <typename Real>
Real gelu_grad(Real x) {
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    return Real(0.5) * (Real(1) + std::erf(x * Real(M_SQRT1_2))) +
           x * static_cast<Real>(inv_sqrt_2pi * std::exp(-0.5 * double(x) * double(x)));
}

} // namespace detail

// Decoder-only transformer with pre-norm blocks, GELU FFN and learned
// positional embeddings. Base weights are immutable after construction;
// adaptation happens only through PrefixParams / LoraParams arguments.
template <typename Real>
class Transformer {
public:
    struct LayerWeights {
        std::vector<Real> ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, w2;
    };

    explicit Transformer(const ModelConfig& cfg) : cfg_(cfg) {
        cfg.validate();
        Rng rng = Rng(cfg.seed).split("model-init");
        auto gauss = [&](std::vector<Real>& v, size_t sz, double std_dev) {
            v.resize(sz);
            for (Real& x : v) x = static_cast<Real>(rng.next_gaussian() * std_dev);
        };
        const int h = cfg.hidden_dim, f = cfg.ffn_dim;
        // Fan-in scaled init throughout. The base stays frozen, so unlike a
        // pretrained-then-finetuned network it never gets a chance to grow out
        // of a small init: with tiny weights the pre-norm residual stream would
        // carry near-uniform attention and the unembedding rows would be too
        // short for any adapter to push a logit margin, capping the reachable
        // loss near log(vocab). 1/sqrt(fan_in) keeps activations and logits at
        // unit scale so prefix/LoRA tuning has real headroom.
        const double fan_h = 1.0 / std::sqrt(static_cast<double>(h));
        const double fan_f = 1.0 / std::sqrt(static_cast<double>(f));
        gauss(tok_emb_, static_cast<size_t>(cfg.vocab_size) * h, fan_h);
        gauss(pos_emb_, static_cast<size_t>(cfg.max_seq_len) * h, fan_h);
        layers_.resize(cfg.num_layers);
        // residual projections get the usual depth-scaled init
        double resid_std = fan_h / std::sqrt(2.0 * cfg.num_layers);
        for (auto& lw : layers_) {
            lw.ln1_g.assign(h, Real(1));
            lw.ln1_b.assign(h, Real(0));
            gauss(lw.wq, static_cast<size_t>(h) * h, fan_h);
            gauss(lw.wk, static_cast<size_t>(h) * h, fan_h);
            gauss(lw.wv, static_cast<size_t>(h) * h, fan_h);
            gauss(lw.wo, static_cast<size_t>(h) * h, resid_std);
            lw.ln2_g.assign(h, Real(1));
            lw.ln2_b.assign(h, Real(0));
            gauss(lw.w1, static_cast<size_t>(f) * h, fan_h);
            gauss(lw.w2, static_cast<size_t>(h) * f, fan_f / std::sqrt(2.0 * cfg.num_layers));
        }
        lnf_g_.assign(h, Real(1));
        lnf_b_.assign(h, Real(0));
        // The final LayerNorm pins ||x|| at sqrt(h), so the best reachable
        // logit margin is ||x|| * ||w_out row||. Unit-norm rows cap that margin
        // at sqrt(h), which for small h floors the NLL well above zero no
        // matter how good the adapter is. Rows of norm 4 raise the ceiling to
        // 4*sqrt(h), enough for desk-scale configs to memorize to ~zero loss.
        gauss(w_out_, static_cast<size_t>(cfg.vocab_size) * h, 4.0 * fan_h);
    }

    const ModelConfig& config() const { return cfg_; }

    // test hook: rig the unembedding so chosen tokens dominate
    std::vector<Real>& mutable_w_out() { return w_out_; }
    std::vector<Real>& mutable_tok_emb() { return tok_emb_; }
    const std::vector<LayerWeights>& layers() const { return layers_; }

    uint64_t base_weight_hash() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        auto mix = [&](const std::vector<Real>& v) {
            const unsigned char* p = reinterpret_cast<const unsigned char*>(v.data());
            size_t bytes = v.size() * sizeof(Real);
            for (size_t i = 0; i < bytes; ++i) {
                h ^= p[i];
                h *= 0x100000001b3ULL;
            }
        };
        mix(tok_emb_);
        mix(pos_emb_);
        for (const auto& lw : layers_) {
            mix(lw.ln1_g); mix(lw.ln1_b);
            mix(lw.wq); mix(lw.wk); mix(lw.wv); mix(lw.wo);
            mix(lw.ln2_g); mix(lw.ln2_b);
            mix(lw.w1); mix(lw.w2);
        }
        mix(lnf_g_);
        mix(lnf_b_);
        mix(w_out_);
        return h;
    }

    struct Cache {
        int T = 0;
        struct Layer {
            int prefix_len = 0;
            std::vector<Real> xin, ln1_out, ln1_mean, ln1_rstd;
            std::vector<Real> q, k, v, u_q, u_v;
            std::vector<Real> probs; // [heads][T][prefix_len + T], row stride prefix_len+T
            std::vector<Real> ctx, x_mid, ln2_out, ln2_mean, ln2_rstd;
            std::vector<Real> ffn_a, ffn_g;
        };
        std::vector<Layer> layers;
        std::vector<Real> x_final, lnf_mean, lnf_rstd, lnf_out;
        std::vector<Real> logits; // [T][vocab]
    };

    Cache forward_cached(const std::vector<int>& tokens,
                         const PrefixParams<Real>* prefix = nullptr,
                         const LoraParams<Real>* lora = nullptr) const {
        check_inputs(tokens, prefix, lora);
        const int T = static_cast<int>(tokens.size());
        const int h = cfg_.hidden_dim, f = cfg_.ffn_dim;
        const int heads = cfg_.num_heads, hd = h / heads;
        const Real inv_sqrt_hd = Real(1) / std::sqrt(static_cast<Real>(hd));

        Cache c;
        c.T = T;
        c.layers.resize(cfg_.num_layers);

        std::vector<Real> x(static_cast<size_t>(T) * h);
        for (int t = 0; t < T; ++t) {
            const Real* te = tok_emb_.data() + static_cast<size_t>(tokens[t]) * h;
            const Real* pe = pos_emb_.data() + static_cast<size_t>(t) * h;
            Real* xt = x.data() + static_cast<size_t>(t) * h;
            for (int i = 0; i < h; ++i) xt[i] = te[i] + pe[i];
        }

        for (int l = 0; l < cfg_.num_layers; ++l) {
            auto& lw = layers_[l];
            auto& lc = c.layers[l];
            const int P = prefix && l < prefix->d ? prefix->n : 0;
            lc.prefix_len = P;
            lc.xin = x;
            lc.ln1_out.resize(x.size());
            lc.ln1_mean.resize(T);
            lc.ln1_rstd.resize(T);
            detail::layernorm_forward(x.data(), lw.ln1_g.data(), lw.ln1_b.data(),
                                      lc.ln1_out.data(), lc.ln1_mean.data(),
                                      lc.ln1_rstd.data(), T, h);

            lc.q.resize(x.size());
            lc.k.resize(x.size());
            lc.v.resize(x.size());
            detail::linear_forward(lw.wq.data(), lc.ln1_out.data(), lc.q.data(), T, h, h);
            detail::linear_forward(lw.wk.data(), lc.ln1_out.data(), lc.k.data(), T, h, h);
            detail::linear_forward(lw.wv.data(), lc.ln1_out.data(), lc.v.data(), T, h, h);
            apply_lora_delta(lora, l, lc.ln1_out, lc.q, lc.v, lc.u_q, lc.u_v, T);

            const int stride = P + T;
            lc.probs.assign(static_cast<size_t>(heads) * T * stride, Real(0));
            lc.ctx.assign(x.size(), Real(0));
            for (int head = 0; head < heads; ++head) {
                const int off = head * hd;
                for (int t = 0; t < T; ++t) {
                    const Real* qt = lc.q.data() + static_cast<size_t>(t) * h + off;
                    Real* row = lc.probs.data() +
                                (static_cast<size_t>(head) * T + t) * stride;
                    const int m = P + t + 1;
                    Real mx = -std::numeric_limits<Real>::infinity();
                    for (int j = 0; j < m; ++j) {
                        const Real* kj = j < P
                                             ? prefix->key(l, j) + off
                                             : lc.k.data() + static_cast<size_t>(j - P) * h + off;
                        row[j] = kernels::dot(qt, kj, hd) * inv_sqrt_hd;
                        mx = std::max(mx, row[j]);
                    }
                    Real denom = Real(0);
                    for (int j = 0; j < m; ++j) {
                        row[j] = std::exp(row[j] - mx);
                        denom += row[j];
                    }
                    Real inv_denom = Real(1) / denom;
                    Real* ct = lc.ctx.data() + static_cast<size_t>(t) * h + off;
                    for (int j = 0; j < m; ++j) {
                        row[j] *= inv_denom;
                        const Real* vj = j < P
                                             ? prefix->value(l, j) + off
                                             : lc.v.data() + static_cast<size_t>(j - P) * h + off;
                        kernels::axpy(row[j], vj, ct, hd);
                    }
                }
            }

            lc.x_mid.resize(x.size());
            detail::linear_forward(lw.wo.data(), lc.ctx.data(), lc.x_mid.data(), T, h, h);
            for (size_t i = 0; i < x.size(); ++i) lc.x_mid[i] += lc.xin[i];

            lc.ln2_out.resize(x.size());
            lc.ln2_mean.resize(T);
            lc.ln2_rstd.resize(T);
            detail::layernorm_forward(lc.x_mid.data(), lw.ln2_g.data(), lw.ln2_b.data(),
                                      lc.ln2_out.data(), lc.ln2_mean.data(),
                                      lc.ln2_rstd.data(), T, h);
            lc.ffn_a.resize(static_cast<size_t>(T) * f);
            lc.ffn_g.resize(lc.ffn_a.size());
            detail::linear_forward(lw.w1.data(), lc.ln2_out.data(), lc.ffn_a.data(), T, h, f);
            for (size_t i = 0; i < lc.ffn_a.size(); ++i) {
                lc.ffn_g[i] = detail::gelu(lc.ffn_a[i]);
            }
            std::vector<Real> ffn_out(x.size());
            detail::linear_forward(lw.w2.data(), lc.ffn_g.data(), ffn_out.data(), T, f, h);
            for (size_t i = 0; i < x.size(); ++i) x[i] = lc.x_mid[i] + ffn_out[i];
        }

        c.x_final = x;
        c.lnf_mean.resize(T);
        c.lnf_rstd.resize(T);
        c.lnf_out.resize(x.size());
        detail::layernorm_forward(x.data(), lnf_g_.data(), lnf_b_.data(), c.lnf_out.data(),
                                  c.lnf_mean.data(), c.lnf_rstd.data(), T, h);
        c.logits.resize(static_cast<size_t>(T) * cfg_.vocab_size);
        detail::linear_forward(w_out_.data(), c.lnf_out.data(), c.logits.data(), T, h,
                               cfg_.vocab_size);
        return c;
    }

    // logits, [T][vocab_size]
    std::vector<Real> forward(const std::vector<int>& tokens,
                              const PrefixParams<Real>* prefix = nullptr,
                              const LoraParams<Real>* lora = nullptr) const {
        return forward_cached(tokens, prefix, lora).logits;
    }

    // mean next-token negative log-likelihood
    double nll_loss(const std::vector<int>& tokens,
                    const PrefixParams<Real>* prefix = nullptr,
                    const LoraParams<Real>* lora = nullptr) const {
        if (tokens.size() < 2) throw ConfigError("nll_loss needs at least 2 tokens");
        Cache c = forward_cached(tokens, prefix, lora);
        return nll_from_logits(c.logits, tokens);
    }

    double nll_from_logits(const std::vector<Real>& logits,
                           const std::vector<int>& tokens) const {
        const int T = static_cast<int>(tokens.size());
        const int V = cfg_.vocab_size;
        double total = 0.0;
        for (int t = 0; t + 1 < T; ++t) {
            const Real* row = logits.data() + static_cast<size_t>(t) * V;
            double mx = row[0];
            for (int v = 1; v < V; ++v) mx = std::max<double>(mx, row[v]);
            double denom = 0.0;
            for (int v = 0; v < V; ++v) denom += std::exp(double(row[v]) - mx);
            total += -(double(row[tokens[t + 1]]) - mx - std::log(denom));
        }
        return total / (T - 1);
    }

    double sequence_perplexity(const std::vector<int>& tokens,
                               const PrefixParams<Real>* prefix = nullptr,
                               const LoraParams<Real>* lora = nullptr) const {
        return std::exp(nll_loss(tokens, prefix, lora));
    }

    // Backward pass for adapter parameters only; base weights receive no
    // gradient buffers. Returns the loss. Gradients are accumulated into
    // dprefix / dlora when provided.
    double backward(const std::vector<int>& tokens, const PrefixParams<Real>* prefix,
                    const LoraParams<Real>* lora, PrefixParams<Real>* dprefix,
                    LoraParams<Real>* dlora) const {
        if (tokens.size() < 2) throw ConfigError("backward needs at least 2 tokens");
        Cache c = forward_cached(tokens, prefix, lora);
        const int T = c.T;
        const int h = cfg_.hidden_dim, f = cfg_.ffn_dim, V = cfg_.vocab_size;
        const int heads = cfg_.num_heads, hd = h / heads;
        const Real inv_sqrt_hd = Real(1) / std::sqrt(static_cast<Real>(hd));
        const int n_pred = T - 1;

        double loss = nll_from_logits(c.logits, tokens);

        // d logits
        std::vector<Real> dlogits(c.logits.size(), Real(0));
        for (int t = 0; t < n_pred; ++t) {
            const Real* row = c.logits.data() + static_cast<size_t>(t) * V;
            Real* drow = dlogits.data() + static_cast<size_t>(t) * V;
            Real mx = row[0];
            for (int v = 1; v < V; ++v) mx = std::max(mx, row[v]);
            Real denom = Real(0);
            for (int v = 0; v < V; ++v) denom += std::exp(row[v] - mx);
            Real inv_denom = Real(1) / denom;
            for (int v = 0; v < V; ++v) {
                drow[v] = std::exp(row[v] - mx) * inv_denom / n_pred;
            }
            drow[tokens[t + 1]] -= Real(1) / n_pred;
        }

        std::vector<Real> dx(static_cast<size_t>(T) * h, Real(0));
        {
            std::vector<Real> dlnf(dx.size(), Real(0));
            detail::linear_backward_input(w_out_.data(), dlogits.data(), dlnf.data(), T, h, V);
            detail::layernorm_backward_input(c.x_final.data(), lnf_g_.data(),
                                             c.lnf_mean.data(), c.lnf_rstd.data(),
                                             dlnf.data(), dx.data(), T, h);
        }

        std::vector<Real> dmid(dx.size()), dff(static_cast<size_t>(T) * f),
            dctx(dx.size()), dq(dx.size()), dk(dx.size()), dv(dx.size()),
            dln(dx.size());
        for (int l = cfg_.num_layers - 1; l >= 0; --l) {
            auto& lw = layers_[l];
            auto& lc = c.layers[l];
            const int P = lc.prefix_len;
            const int stride = P + T;

            // FFN branch: x_out = x_mid + W2 gelu(W1 ln2(x_mid))
            std::fill(dff.begin(), dff.end(), Real(0));
            detail::linear_backward_input(lw.w2.data(), dx.data(), dff.data(), T, f, h);
            for (size_t i = 0; i < dff.size(); ++i) {
                dff[i] *= detail::gelu_grad(lc.ffn_a[i]);
            }
            std::fill(dln.begin(), dln.end(), Real(0));
            detail::linear_backward_input(lw.w1.data(), dff.data(), dln.data(), T, h, f);
            dmid = dx; // residual path
            detail::layernorm_backward_input(lc.x_mid.data(), lw.ln2_g.data(),
                                             lc.ln2_mean.data(), lc.ln2_rstd.data(),
                                             dln.data(), dmid.data(), T, h);

            // attention branch: x_mid = xin + Wo ctx
            std::fill(dctx.begin(), dctx.end(), Real(0));
            detail::linear_backward_input(lw.wo.data(), dmid.data(), dctx.data(), T, h, h);

            std::fill(dq.begin(), dq.end(), Real(0));
            std::fill(dk.begin(), dk.end(), Real(0));
            std::fill(dv.begin(), dv.end(), Real(0));
            std::vector<Real> dp(stride), ds(stride);
            for (int head = 0; head < heads; ++head) {
                const int off = head * hd;
                for (int t = 0; t < T; ++t) {
                    const int m = P + t + 1;
                    const Real* row = lc.probs.data() +
                                      (static_cast<size_t>(head) * T + t) * stride;
                    const Real* dct = dctx.data() + static_cast<size_t>(t) * h + off;
                    for (int j = 0; j < m; ++j) {
                        const Real* vj = j < P
                                             ? prefix->value(l, j) + off
                                             : lc.v.data() + static_cast<size_t>(j - P) * h + off;
                        dp[j] = kernels::dot(dct, vj, hd);
                    }
                    Real dot_pd = Real(0);
                    for (int j = 0; j < m; ++j) dot_pd += row[j] * dp[j];
                    for (int j = 0; j < m; ++j) ds[j] = row[j] * (dp[j] - dot_pd);

                    const Real* qt = lc.q.data() + static_cast<size_t>(t) * h + off;
                    Real* dqt = dq.data() + static_cast<size_t>(t) * h + off;
                    for (int j = 0; j < m; ++j) {
                        const Real* kj = j < P
                                             ? prefix->key(l, j) + off
                                             : lc.k.data() + static_cast<size_t>(j - P) * h + off;
                        kernels::axpy(ds[j] * inv_sqrt_hd, kj, dqt, hd);
                        if (j < P) {
                            if (dprefix) {
                                kernels::axpy(ds[j] * inv_sqrt_hd, qt,
                                              dprefix->key(l, j) + off, hd);
                                kernels::axpy(row[j], dct, dprefix->value(l, j) + off, hd);
                            }
                        } else {
                            kernels::axpy(ds[j] * inv_sqrt_hd, qt,
                                          dk.data() + static_cast<size_t>(j - P) * h + off, hd);
                            kernels::axpy(row[j], dct,
                                          dv.data() + static_cast<size_t>(j - P) * h + off, hd);
                        }
                    }
                }
            }

            // project back through q/k/v into ln1, with LoRA side paths
            std::fill(dln.begin(), dln.end(), Real(0));
            detail::linear_backward_input(lw.wq.data(), dq.data(), dln.data(), T, h, h);
            detail::linear_backward_input(lw.wk.data(), dk.data(), dln.data(), T, h, h);
            detail::linear_backward_input(lw.wv.data(), dv.data(), dln.data(), T, h, h);
            if (lora) {
                if (lora->cfg.target_query) {
                    lora_backward(lora, dlora, 'q', l, lc.ln1_out, lc.u_q, dq, dln, T);
                }
                if (lora->cfg.target_value) {
                    lora_backward(lora, dlora, 'v', l, lc.ln1_out, lc.u_v, dv, dln, T);
                }
            }

            dx = dmid; // residual into xin
            detail::layernorm_backward_input(lc.xin.data(), lw.ln1_g.data(),
                                             lc.ln1_mean.data(), lc.ln1_rstd.data(),
                                             dln.data(), dx.data(), T, h);
        }
        return loss;
    }

    // Greedy decoding; argmax ties break toward the lowest token id. The
    // context slides when prompt + generated exceeds max_seq_len.
    std::vector<int> generate_greedy(const std::vector<int>& prompt, int num_new,
                                     const PrefixParams<Real>* prefix = nullptr,
                                     const LoraParams<Real>* lora = nullptr) const {
        if (prompt.empty()) throw ConfigError("prompt must be non-empty");
        if (static_cast<int>(prompt.size()) > cfg_.max_seq_len) {
            throw ConfigError("prompt exceeds max_seq_len");
        }
        std::vector<int> tokens = prompt;
        for (int step = 0; step < num_new; ++step) {
            std::vector<int> window = tokens;
            if (static_cast<int>(window.size()) > cfg_.max_seq_len) {
                window.assign(tokens.end() - cfg_.max_seq_len, tokens.end());
            }
            std::vector<Real> logits = forward(window, prefix, lora);
            const Real* row =
                logits.data() + (window.size() - 1) * static_cast<size_t>(cfg_.vocab_size);
            int best = 0;
            for (int v = 1; v < cfg_.vocab_size; ++v) {
                if (row[v] > row[best]) best = v;
            }
            tokens.push_back(best);
        }
        return tokens;
    }

private:
    void check_inputs(const std::vector<int>& tokens, const PrefixParams<Real>* prefix,
                      const LoraParams<Real>* lora) const {
        if (tokens.empty()) throw ConfigError("empty token sequence");
        if (static_cast<int>(tokens.size()) > cfg_.max_seq_len) {
            throw ConfigError("sequence exceeds max_seq_len");
        }
        for (int t : tokens) {
            if (t < 0 || t >= cfg_.vocab_size) throw ConfigError("token id out of range");
        }
        if (prefix) {
            if (prefix->h != cfg_.hidden_dim || prefix->d < 1 ||
                prefix->d > cfg_.num_layers || prefix->n < 1) {
                throw ConfigError("prefix shape incompatible with model");
            }
        }
        if (lora) {
            if (lora->h != cfg_.hidden_dim || lora->layers != cfg_.num_layers) {
                throw ConfigError("lora shape incompatible with model");
            }
        }
    }

    void apply_lora_delta(const LoraParams<Real>* lora, int layer,
                          const std::vector<Real>& x, std::vector<Real>& q,
                          std::vector<Real>& v, std::vector<Real>& u_q,
                          std::vector<Real>& u_v, int T) const {
        if (!lora) return;
        const int h = cfg_.hidden_dim, r = lora->cfg.rank;
        const Real scale = lora->scale();
        auto apply = [&](char target, std::vector<Real>& y, std::vector<Real>& u) {
            u.assign(static_cast<size_t>(T) * r, Real(0));
            detail::linear_forward(lora->a(target, layer), x.data(), u.data(), T, h, r);
            // y += scale * B u
            const Real* b = lora->b(target, layer);
            for (int t = 0; t < T; ++t) {
                const Real* ut = u.data() + static_cast<size_t>(t) * r;
                Real* yt = y.data() + static_cast<size_t>(t) * h;
                for (int o = 0; o < h; ++o) {
                    yt[o] += scale * kernels::dot(b + static_cast<size_t>(o) * r, ut, r);
                }
            }
        };
        if (lora->cfg.target_query) apply('q', q, u_q);
        if (lora->cfg.target_value) apply('v', v, u_v);
    }

    // gradient of the LoRA delta for one projection: y += scale * B (A x)
    void lora_backward(const LoraParams<Real>* lora, LoraParams<Real>* dlora,
                       char target, int layer, const std::vector<Real>& x,
                       const std::vector<Real>& u, const std::vector<Real>& dy,
                       std::vector<Real>& dx, int T) const {
        const int h = cfg_.hidden_dim, r = lora->cfg.rank;
        const Real scale = lora->scale();
        const Real* b = lora->b(target, layer);
        const Real* a = lora->a(target, layer);
        std::vector<Real> w(static_cast<size_t>(T) * r, Real(0)); // B^T dy
        for (int t = 0; t < T; ++t) {
            const Real* dyt = dy.data() + static_cast<size_t>(t) * h;
            Real* wt = w.data() + static_cast<size_t>(t) * r;
            for (int o = 0; o < h; ++o) {
                kernels::axpy(dyt[o], b + static_cast<size_t>(o) * r, wt, r);
            }
        }
        if (dlora) {
            Real* db = dlora->b(target, layer);
            Real* da = dlora->a(target, layer);
            for (int t = 0; t < T; ++t) {
                const Real* dyt = dy.data() + static_cast<size_t>(t) * h;
                const Real* ut = u.data() + static_cast<size_t>(t) * r;
                for (int o = 0; o < h; ++o) {
                    kernels::axpy(scale * dyt[o], ut, db + static_cast<size_t>(o) * r, r);
                }
                const Real* xt = x.data() + static_cast<size_t>(t) * h;
                const Real* wt = w.data() + static_cast<size_t>(t) * r;
                for (int j = 0; j < r; ++j) {
                    kernels::axpy(scale * wt[j], xt, da + static_cast<size_t>(j) * h, h);
                }
            }
        }
        // dx += scale * A^T w
        for (int t = 0; t < T; ++t) {
            const Real* wt = w.data() + static_cast<size_t>(t) * r;
            Real* dxt = dx.data() + static_cast<size_t>(t) * h;
            for (int j = 0; j < r; ++j) {
                kernels::axpy(scale * wt[j], a + static_cast<size_t>(j) * h, dxt, h);
            }
        }
    }

    ModelConfig cfg_;
    std::vector<Real> tok_emb_, pos_emb_;
    std::vector<LayerWeights> layers_;
    std::vector<Real> lnf_g_, lnf_b_, w_out_;
};

} // namespace factforge
