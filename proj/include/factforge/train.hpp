#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "factforge/errors.hpp"
#include "factforge/model.hpp"
#include "factforge/tokenizer.hpp"

namespace factforge {

struct TrainRunConfig {
    int max_epochs = 450;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double initial_lr = 3e-2;
    double lr_decay_factor = 10.0;
    int patience_epochs = 10;
    double min_lr = 3e-5;
    double early_stop_loss = 1e-4;
    uint64_t seed = 0;

    void validate() const {
        if (max_epochs <= 0) throw ConfigError("max_epochs must be > 0");
        if (initial_lr <= 0) throw ConfigError("initial_lr must be > 0");
        if (patience_epochs < 1) throw ConfigError("patience_epochs must be >= 1");
        if (lr_decay_factor <= 1) throw ConfigError("lr_decay_factor must be > 1");
    }
};

struct TrainTrace {
    std::vector<double> epoch_loss;
    std::vector<std::pair<int, double>> lr_changes; // (epoch, new lr)
    double final_loss = 0.0;
    int epochs_run = 0;
};

template <typename Real>
struct ParamView {
    Real* data = nullptr;
    const Real* grad = nullptr;
    size_t size = 0;
};

template <typename Real>
struct AdamWState {
    std::vector<std::vector<double>> m, v; // one moment pair per tensor
    long long step = 0;

    static AdamWState for_views(const std::vector<ParamView<Real>>& views) {
        AdamWState s;
        for (const auto& view : views) {
            s.m.emplace_back(view.size, 0.0);
            s.v.emplace_back(view.size, 0.0);
        }
        return s;
    }
};

// One AdamW step with decoupled weight decay and bias correction:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * p)
template <typename Real>
void adamw_step(std::vector<ParamView<Real>>& views, AdamWState<Real>& state, double lr,
                const TrainRunConfig& cfg) {
    if (views.size() != state.m.size()) throw ConfigError("adamw state/view mismatch");
    ++state.step;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (size_t ti = 0; ti < views.size(); ++ti) {
        ParamView<Real>& view = views[ti];
        if (state.m[ti].size() != view.size) throw ConfigError("adamw state size mismatch");
        for (size_t i = 0; i < view.size; ++i) {
            double g = static_cast<double>(view.grad[i]);
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient at tensor " + std::to_string(ti) +
                                   " offset " + std::to_string(i));
            }
            double& m = state.m[ti][i];
            double& v = state.v[ti][i];
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            double m_hat = m / bc1;
            double v_hat = v / bc2;
            double p = static_cast<double>(view.data[i]);
            p -= lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + cfg.weight_decay * p);
            view.data[i] = static_cast<Real>(p);
        }
    }
}

/// Plateau schedule over a full loss history: the lr divides by the decay
// factor whenever `patience_epochs` consecutive epochs fail to improve the
// best-so-far loss; the patience counter resets on each decay; lr floors at
// min_lr. Returns the lr in effect after the last recorded epoch.
inline double lr_schedule_update(const std::vector<double>& epoch_loss,
                                 const TrainRunConfig& cfg,
                                 std::vector<std::pair<int, double>>* changes = nullptr) {
    cfg.validate();
    double lr = cfg.initial_lr;
    double best = std::numeric_limits<double>::infinity();
    int since_improve = 0;
    for (size_t e = 0; e < epoch_loss.size(); ++e) {
        if (epoch_loss[e] < best) {
            best = epoch_loss[e];
            since_improve = 0;
        } else {
            ++since_improve;
        }
        if (since_improve >= cfg.patience_epochs) {
            // the tolerance keeps a rounding residue from logging a spurious
            // final clamp-to-floor change (3e-2 / 10^3 lands a ulp above 3e-5)
            if (lr > cfg.min_lr * (1.0 + 1e-9)) {
                lr = std::max(lr / cfg.lr_decay_factor, cfg.min_lr);
                if (changes) changes->emplace_back(static_cast<int>(e) + 1, lr);
            }
            since_improve = 0;
        }
    }
    return lr;
}

template <typename Real>
std::vector<ParamView<Real>> prefix_views(PrefixParams<Real>& p,
                                          const PrefixParams<Real>& g) {
    return {{p.keys.data(), g.keys.data(), p.keys.size()},
            {p.values.data(), g.values.data(), p.values.size()}};
}

template <typename Real>
std::vector<ParamView<Real>> lora_views(LoraParams<Real>& p, const LoraParams<Real>& g) {
    std::vector<ParamView<Real>> views;
    if (p.cfg.target_query) {
        views.push_back({p.a_q.data(), g.a_q.data(), p.a_q.size()});
        views.push_back({p.b_q.data(), g.b_q.data(), p.b_q.size()});
    }
    if (p.cfg.target_value) {
        views.push_back({p.a_v.data(), g.a_v.data(), p.a_v.size()});
        views.push_back({p.b_v.data(), g.b_v.data(), p.b_v.size()});
    }
    return views;
}

namespace detail {

// Shared full-batch loop. `run_backward(sentence, scale)` accumulates scaled
// gradients and returns the sentence loss; `views()` rebinds param/grad
// pointers after the grads buffer is zeroed.
template <typename Real>
TrainTrace train_loop(const std::vector<std::vector<int>>& token_seqs,
                      const TrainRunConfig& cfg,
                      const std::function<void()>& zero_grads,
                      const std::function<double(const std::vector<int>&, Real)>& run_backward,
                      std::vector<ParamView<Real>>& views) {
    cfg.validate();
    if (token_seqs.empty()) throw ConfigError("training set is empty");
    TrainTrace trace;
    AdamWState<Real> state = AdamWState<Real>::for_views(views);
    double lr = cfg.initial_lr;
    double best = std::numeric_limits<double>::infinity();
    int since_improve = 0;
    const Real scale = Real(1) / static_cast<Real>(token_seqs.size());
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        zero_grads();
        double loss = 0.0;
        for (const auto& seq : token_seqs) loss += run_backward(seq, scale);
        loss /= static_cast<double>(token_seqs.size());
        adamw_step(views, state, lr, cfg);
        trace.epoch_loss.push_back(loss);
        trace.epochs_run = epoch + 1;
        if (loss < best) {
            best = loss;
            since_improve = 0;
        } else {
            ++since_improve;
        }
        if (since_improve >= cfg.patience_epochs) {
            // same floor tolerance as lr_schedule_update so traces stay in sync
            if (lr > cfg.min_lr * (1.0 + 1e-9)) {
                lr = std::max(lr / cfg.lr_decay_factor, cfg.min_lr);
                trace.lr_changes.emplace_back(epoch + 1, lr);
            }
            since_improve = 0;
        }
        if (loss < cfg.early_stop_loss) break;
    }
    trace.final_loss = trace.epoch_loss.back();
    return trace;
}

inline std::vector<std::vector<int>> tokenize_sentences(
    const std::vector<std::string>& sentences, const Tokenizer& tokenizer,
    const ModelConfig& mc) {
    if (sentences.empty()) throw ConfigError("training set is empty");
    std::vector<std::vector<int>> seqs;
    for (const std::string& s : sentences) {
        std::vector<int> toks = tokenizer.encode(s);
        if (toks.size() < 2) throw ConfigError("training sentence too short: " + s);
        if (static_cast<int>(toks.size()) > mc.max_seq_len) {
            throw ConfigError("training sentence exceeds max_seq_len: " + s);
        }
        seqs.push_back(std::move(toks));
    }
    return seqs;
}

} // namespace detail

template <typename Real>
struct PrefixTrainResult {
    PrefixParams<Real> prefix;
    TrainTrace trace;
};

template <typename Real>
struct LoraTrainResult {
    LoraParams<Real> lora;
    TrainTrace trace;
};

template <typename Real>
PrefixTrainResult<Real> train_prefix(const Transformer<Real>& model,
                                     const PrefixConfig& pc,
                                     const std::vector<std::string>& sentences,
                                     const Tokenizer& tokenizer,
                                     const TrainRunConfig& cfg) {
    auto seqs = detail::tokenize_sentences(sentences, tokenizer, model.config());
    uint64_t base_hash = model.base_weight_hash();
    PrefixTrainResult<Real> result;
    result.prefix = PrefixParams<Real>::init(model.config(), pc, cfg.seed);
    PrefixParams<Real> grads = PrefixParams<Real>::zeros(model.config(), pc);
    auto views = prefix_views(result.prefix, grads);
    result.trace = detail::train_loop<Real>(
        seqs, cfg,
        [&] {
            std::fill(grads.keys.begin(), grads.keys.end(), Real(0));
            std::fill(grads.values.begin(), grads.values.end(), Real(0));
        },
        [&](const std::vector<int>& seq, Real scale) {
            PrefixParams<Real> g = PrefixParams<Real>::zeros(model.config(), pc);
            double loss = model.backward(seq, &result.prefix, nullptr, &g, nullptr);
            kernels::axpy(scale, g.keys.data(), grads.keys.data(), g.keys.size());
            kernels::axpy(scale, g.values.data(), grads.values.data(), g.values.size());
            return loss;
        },
        views);
    if (model.base_weight_hash() != base_hash) {
        throw NumericError("base weights changed during prefix training");
    }
    return result;
}

template <typename Real>
LoraTrainResult<Real> train_lora(const Transformer<Real>& model, const LoraConfig& lc,
                                 const std::vector<std::string>& sentences,
                                 const Tokenizer& tokenizer, const TrainRunConfig& cfg) {
    auto seqs = detail::tokenize_sentences(sentences, tokenizer, model.config());
    uint64_t base_hash = model.base_weight_hash();
    LoraTrainResult<Real> result;
    result.lora = LoraParams<Real>::init(model.config(), lc, cfg.seed);
    LoraParams<Real> grads = LoraParams<Real>::zeros(model.config(), lc);
    auto views = lora_views(result.lora, grads);
    auto zero = [](std::vector<Real>& v) { std::fill(v.begin(), v.end(), Real(0)); };
    result.trace = detail::train_loop<Real>(
        seqs, cfg,
        [&] {
            zero(grads.a_q);
            zero(grads.b_q);
            zero(grads.a_v);
            zero(grads.b_v);
        },
        [&](const std::vector<int>& seq, Real scale) {
            LoraParams<Real> g = LoraParams<Real>::zeros(model.config(), lc);
            double loss = model.backward(seq, nullptr, &result.lora, nullptr, &g);
            kernels::axpy(scale, g.a_q.data(), grads.a_q.data(), g.a_q.size());
            kernels::axpy(scale, g.b_q.data(), grads.b_q.data(), g.b_q.size());
            kernels::axpy(scale, g.a_v.data(), grads.a_v.data(), g.a_v.size());
            kernels::axpy(scale, g.b_v.data(), grads.b_v.data(), g.b_v.size());
            return loss;
        },
        views);
    if (model.base_weight_hash() != base_hash) {
        throw NumericError("base weights changed during lora training");
    }
    return result;
}

} // namespace factforge
