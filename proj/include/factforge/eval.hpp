#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "factforge/benchmark_gen.hpp"
#include "factforge/model.hpp"
#include "factforge/stats.hpp"
#include "factforge/tokenizer.hpp"

namespace factforge {

// A generated continuation counts as correct iff it contains the object
// string, case-insensitively.
inline bool exact_match(const std::string& generated, const std::string& object) {
    if (object.empty()) throw ConfigError("exact_match: empty object");
    return contains_ci(generated, object);
}

struct PredictionResult {
    std::string fact_id;
    int sentence_index = 0;
    std::string generated;
    bool correct = false;
    bool flagged = false; // tokenization overflow, scored incorrect
};

struct PredictionReport {
    double accuracy = 0.0; // correct / sentences evaluated
    size_t sentences_evaluated = 0;
    size_t correct = 0;
    std::map<std::string, int> per_fact_correct;
    std::vector<PredictionResult> predictions;
};

inline constexpr int kGenerationTokens = 10;

// Prompts the model with each of a record's 5 cloze sentences, generates
// 10 tokens greedily and scores by exact_match.
template <typename Real>
PredictionReport prediction_accuracy(const Transformer<Real>& model,
                                     const Tokenizer& tokenizer,
                                     const std::vector<FactRecord>& records,
                                     const PrefixParams<Real>* prefix = nullptr,
                                     const LoraParams<Real>* lora = nullptr,
                                     int gen_tokens = kGenerationTokens) {
    PredictionReport report;
    for (const FactRecord& rec : records) {
        int fact_correct = 0;
        for (size_t si = 0; si < rec.cloze_sentences.size(); ++si) {
            PredictionResult pr;
            pr.fact_id = rec.id;
            pr.sentence_index = static_cast<int>(si);
            std::vector<int> prompt = tokenizer.encode(rec.cloze_sentences[si]);
            if (prompt.empty() ||
                static_cast<int>(prompt.size()) > model.config().max_seq_len) {
                pr.flagged = true;
            } else {
                std::vector<int> out = model.generate_greedy(prompt, gen_tokens, prefix, lora);
                std::vector<int> fresh(out.begin() + prompt.size(), out.end());
                pr.generated = tokenizer.decode_text(fresh);
                pr.correct = exact_match(pr.generated, rec.triple.object);
            }
            ++report.sentences_evaluated;
            if (pr.correct) {
                ++report.correct;
                ++fact_correct;
            }
            report.predictions.push_back(std::move(pr));
        }
        report.per_fact_correct[rec.id] = fact_correct;
    }
    report.accuracy = report.sentences_evaluated
                          ? static_cast<double>(report.correct) / report.sentences_evaluated
                          : 0.0;
    return report;
}

// Per-run inputs for the proportion-of-learning-models metric.
struct RunFactCounts {
    std::map<std::string, int> baseline_correct; // fact id -> correct sentences
    std::map<std::string, int> tuned_correct;
};

// Restricts each run to facts the baseline got entirely wrong; a run is
// "learning" iff tuned accuracy on that restricted set is nonzero. Runs whose
// restricted set is empty leave the denominator. Absent when no run qualifies.
inline std::optional<double> proportion_learning_models(
    const std::vector<RunFactCounts>& runs) {
    size_t eligible = 0, learning = 0;
    for (const RunFactCounts& run : runs) {
        bool any_unknown = false, any_learned = false;
        for (const auto& [fact, base_correct] : run.baseline_correct) {
            if (base_correct != 0) continue;
            any_unknown = true;
            auto it = run.tuned_correct.find(fact);
            if (it != run.tuned_correct.end() && it->second > 0) any_learned = true;
        }
        if (!any_unknown) continue;
        ++eligible;
        if (any_learned) ++learning;
    }
    if (eligible == 0) return std::nullopt;
    return static_cast<double>(learning) / static_cast<double>(eligible);
}

struct MCQItem {
    std::string stem; // question (choice mode) or sentence stem (completion mode)
    std::vector<std::string> choices; // exactly 4
    int answer_index = 0;
};

namespace detail {

inline std::string join_stem_choice(const std::string& stem, const std::string& choice) {
    if (stem.empty() || stem.back() == ' ' || stem.back() == '\n') return stem + choice;
    return stem + " " + choice;
}

// per-token perplexity of `continuation` given `context`
template <typename Real>
double continuation_perplexity(const Transformer<Real>& model, const Tokenizer& tokenizer,
                               const std::string& context, const std::string& continuation,
                               const PrefixParams<Real>* prefix,
                               const LoraParams<Real>* lora) {
    std::vector<int> ctx = tokenizer.encode(context);
    std::vector<int> cont = tokenizer.encode(continuation);
    if (ctx.empty() || cont.empty()) throw ConfigError("empty MCQ context/continuation");
    std::vector<int> seq = ctx;
    seq.insert(seq.end(), cont.begin(), cont.end());
    if (static_cast<int>(seq.size()) > model.config().max_seq_len) {
        throw ConfigError("MCQ sequence exceeds max_seq_len");
    }
    auto cache = model.forward_cached(seq, prefix, lora);
    const int V = model.config().vocab_size;
    double total = 0.0;
    for (size_t t = ctx.size() - 1; t + 1 < seq.size(); ++t) {
        const Real* row = cache.logits.data() + t * static_cast<size_t>(V);
        double mx = row[0];
        for (int v = 1; v < V; ++v) mx = std::max<double>(mx, row[v]);
        double denom = 0.0;
        for (int v = 0; v < V; ++v) denom += std::exp(double(row[v]) - mx);
        total += -(double(row[seq[t + 1]]) - mx - std::log(denom));
    }
    return std::exp(total / static_cast<double>(cont.size()));
}

} // namespace detail

// SciQ-style: render the shared MCQ prompt with the question and pick the
// choice string with the lowest per-token perplexity as a continuation.
// Ties break toward the lowest index.
template <typename Real>
int mcq_choice_mode(const Transformer<Real>& model, const Tokenizer& tokenizer,
                    const MCQItem& item, const std::string& rendered_prompt,
                    const PrefixParams<Real>* prefix = nullptr,
                    const LoraParams<Real>* lora = nullptr) {
    if (item.choices.size() != 4) throw ConfigError("MCQ item needs exactly 4 choices");
    int best = 0;
    double best_ppl = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < item.choices.size(); ++i) {
        double ppl = detail::continuation_perplexity(
            model, tokenizer, rendered_prompt,
            detail::join_stem_choice("", item.choices[i]), prefix, lora);
        if (ppl < best_ppl) {
            best_ppl = ppl;
            best = static_cast<int>(i);
        }
    }
    return best;
}

// MMLU-style: per-token perplexity of the whole stem+completion sequence.
template <typename Real>
int mcq_completion_mode(const Transformer<Real>& model, const Tokenizer& tokenizer,
                        const MCQItem& item,
                        const PrefixParams<Real>* prefix = nullptr,
                        const LoraParams<Real>* lora = nullptr) {
    if (item.choices.size() != 4) throw ConfigError("MCQ item needs exactly 4 choices");
    int best = 0;
    double best_ppl = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < item.choices.size(); ++i) {
        std::string seq = detail::join_stem_choice(item.stem, item.choices[i]);
        std::vector<int> toks = tokenizer.encode(seq);
        double ppl = model.sequence_perplexity(toks, prefix, lora);
        if (ppl < best_ppl) {
            best_ppl = ppl;
            best = static_cast<int>(i);
        }
    }
    return best;
}

template <typename Real>
std::pair<double, double> prefix_norms(const PrefixParams<Real>& prefix) {
    double key_sq = 0.0, value_sq = 0.0;
    // accumulate in double regardless of Real
    for (Real x : prefix.keys) key_sq += double(x) * double(x);
    for (Real x : prefix.values) value_sq += double(x) * double(x);
    return {std::sqrt(key_sq), std::sqrt(value_sq)};
}

struct ErrorAnalysisRow {
    size_t count = 0;
    double mean_char_len = 0.0;
    double mean_token_len = 0.0;
    double mean_object_char_len = 0.0; // train rows only
    double mean_perplexity = 0.0;
};

struct ErrorAnalysis {
    std::optional<ErrorAnalysisRow> train_learned, train_non_learned;
    std::optional<ErrorAnalysisRow> test_learned, test_non_learned;
    // metric name -> one-sided p for "non-learned mean > learned mean"
    std::map<std::string, double> p_values;
};

// Per-category statistics over learned vs non-learned facts; perplexities
// come from the baseline model.
template <typename Real>
ErrorAnalysis error_analysis_stats(const std::vector<FactRecord>& records,
                                   const std::vector<bool>& learned_flags,
                                   const Transformer<Real>& model,
                                   const Tokenizer& tokenizer) {
    if (records.size() != learned_flags.size()) {
        throw ConfigError("learned_flags must align with records");
    }
    struct Samples {
        std::vector<double> char_len, token_len, object_len, ppl;
    };
    Samples train[2], test[2]; // [learned]
    for (size_t i = 0; i < records.size(); ++i) {
        const FactRecord& rec = records[i];
        Samples& tr = train[learned_flags[i] ? 1 : 0];
        tr.char_len.push_back(static_cast<double>(rec.training_sentence.size()));
        tr.token_len.push_back(
            static_cast<double>(tokenizer.encode(rec.training_sentence).size()));
        tr.object_len.push_back(static_cast<double>(rec.triple.object.size()));
        tr.ppl.push_back(
            model.sequence_perplexity(tokenizer.encode(rec.training_sentence)));
        Samples& te = test[learned_flags[i] ? 1 : 0];
        for (const std::string& s : rec.cloze_sentences) {
            te.char_len.push_back(static_cast<double>(s.size()));
            te.token_len.push_back(static_cast<double>(tokenizer.encode(s).size()));
            te.ppl.push_back(model.sequence_perplexity(tokenizer.encode(s)));
        }
    }
    auto row = [](const Samples& s, bool with_object) -> std::optional<ErrorAnalysisRow> {
        if (s.char_len.empty()) return std::nullopt;
        ErrorAnalysisRow r;
        r.count = s.char_len.size();
        r.mean_char_len = stats::mean(s.char_len);
        r.mean_token_len = stats::mean(s.token_len);
        r.mean_object_char_len = with_object ? stats::mean(s.object_len) : 0.0;
        r.mean_perplexity = stats::mean(s.ppl);
        return r;
    };
    ErrorAnalysis out;
    out.train_non_learned = row(train[0], true);
    out.train_learned = row(train[1], true);
    out.test_non_learned = row(test[0], false);
    out.test_learned = row(test[1], false);
    auto attach = [&](const std::string& name, const std::vector<double>& non_learned,
                      const std::vector<double>& learned) {
        if (non_learned.size() < 2 || learned.size() < 2) return;
        try {
            out.p_values[name] =
                stats::welch_t_test(non_learned, learned, stats::Alternative::Greater).p;
        } catch (const DegenerateSample&) {
            // zero-variance column, no test
        }
    };
    attach("train_char_len", train[0].char_len, train[1].char_len);
    attach("train_token_len", train[0].token_len, train[1].token_len);
    attach("train_object_len", train[0].object_len, train[1].object_len);
    attach("train_perplexity", train[0].ppl, train[1].ppl);
    attach("test_char_len", test[0].char_len, test[1].char_len);
    attach("test_token_len", test[0].token_len, test[1].token_len);
    attach("test_perplexity", test[0].ppl, test[1].ppl);
    return out;
}

} // namespace factforge
