#include <doctest.h>

#include <cmath>
#include <vector>

#include "factforge/eval.hpp"

using namespace factforge;

namespace {

// word-vocab model whose unembedding is all zeros: every logit is equal, so
// greedy decoding always emits token 0 and MCQ perplexities all tie
struct RiggedWorld {
    std::vector<std::string> vocab = {"the", "answer", "is", "bob", "x"};
    Tokenizer tok = Tokenizer::words(vocab);
    ModelConfig mc;
    Transformer<float> model;

    RiggedWorld()
        : mc([&] {
              ModelConfig m;
              m.vocab_size = 5;
              m.hidden_dim = 8;
              m.num_layers = 1;
              m.num_heads = 2;
              m.ffn_dim = 16;
              m.max_seq_len = 32;
              return m;
          }()),
          model(mc) {
        for (float& w : model.mutable_w_out()) w = 0.0f;
    }
};

FactRecord make_record(const std::string& id, const std::string& object) {
    FactRecord rec;
    rec.id = id;
    rec.triple = {"subj " + id, "pred", object};
    rec.training_sentence = "the answer is " + object;
    rec.cloze_sentences = {"the answer is", "answer is", "the answer", "is the answer",
                           "answer the"};
    rec.question = "the answer?";
    rec.choices = {object, "x", "is", "answer"};
    rec.answer_index = 0;
    return rec;
}

ModelConfig byte_cfg(uint64_t seed = 0) {
    ModelConfig mc;
    mc.hidden_dim = 16;
    mc.num_layers = 1;
    mc.num_heads = 2;
    mc.ffn_dim = 32;
    mc.max_seq_len = 128;
    mc.seed = seed;
    return mc;
}

} // namespace

TEST_CASE("exact_match is case-insensitive containment") {
    CHECK(exact_match("He married Jacob Schwartz.", "jacob schwartz"));
    CHECK(exact_match(" jacob schwartz", "Jacob Schwartz"));
    CHECK_FALSE(exact_match("He married Jacob.", "Jacob Schwartz"));
    CHECK_THROWS_AS(exact_match("anything", ""), ConfigError);
}

TEST_CASE("prediction accuracy on a rigged always-'the' model") {
    RiggedWorld world;
    // the model always generates "the the the ..." -> correct iff object == "the"
    std::vector<FactRecord> all_the = {make_record("a", "the")};
    auto report = prediction_accuracy(world.model, world.tok, all_the);
    CHECK(report.accuracy == doctest::Approx(1.0));
    CHECK(report.sentences_evaluated == 5);
    CHECK(report.per_fact_correct.at("a") == 5);

    std::vector<FactRecord> all_bob = {make_record("b", "bob")};
    auto report0 = prediction_accuracy(world.model, world.tok, all_bob);
    CHECK(report0.accuracy == doctest::Approx(0.0));
    CHECK(report0.per_fact_correct.at("b") == 0);

    std::vector<FactRecord> mixed = {make_record("a", "the"), make_record("b", "bob")};
    auto half = prediction_accuracy(world.model, world.tok, mixed);
    CHECK(half.accuracy == doctest::Approx(0.5));
    CHECK(half.sentences_evaluated == 10);
    CHECK(half.correct == 5);
}

TEST_CASE("overflowing cloze prompts are flagged and scored incorrect") {
    RiggedWorld world;
    FactRecord rec = make_record("long", "the");
    std::string huge;
    for (int i = 0; i < 40; ++i) huge += "the ";
    rec.cloze_sentences[0] = huge; // 40 tokens > max_seq_len 32
    auto report = prediction_accuracy(world.model, world.tok, {rec});
    CHECK(report.predictions[0].flagged);
    CHECK_FALSE(report.predictions[0].correct);
    CHECK(report.accuracy == doctest::Approx(4.0 / 5.0));
}

TEST_CASE("proportion of learning models") {
    auto run = [](int base_a, int tuned_a, int base_b, int tuned_b) {
        RunFactCounts r;
        r.baseline_correct = {{"fa", base_a}, {"fb", base_b}};
        r.tuned_correct = {{"fa", tuned_a}, {"fb", tuned_b}};
        return r;
    };
    // 5 eligible runs, 3 learned something on baseline-unknown facts
    std::vector<RunFactCounts> runs = {
        run(0, 3, 0, 0), // learning
        run(0, 0, 0, 1), // learning
        run(0, 0, 0, 0), // eligible, not learning
        run(0, 2, 5, 5), // learning (fa unknown and learned)
        run(0, 0, 0, 0), // eligible, not learning
    };
    CHECK(*proportion_learning_models(runs) == doctest::Approx(0.6));

    // runs where the baseline already knew everything leave the denominator
    runs.push_back(run(5, 5, 3, 3));
    CHECK(*proportion_learning_models(runs) == doctest::Approx(0.6));

    std::vector<RunFactCounts> all_known = {run(5, 5, 1, 1)};
    CHECK_FALSE(proportion_learning_models(all_known).has_value());
    CHECK_FALSE(proportion_learning_models({}).has_value());
}

TEST_CASE("mcq ties break toward the lowest index") {
    RiggedWorld world;
    MCQItem item{"the answer", {"bob", "x", "is", "answer"}, 2};
    // all-zero logits -> all choices equally likely -> index 0 wins
    CHECK(mcq_choice_mode(world.model, world.tok, item, "the answer is") == 0);
    CHECK(mcq_completion_mode(world.model, world.tok, item) == 0);
}

TEST_CASE("mcq choice mode agrees with a brute-force recomputation") {
    ModelConfig mc = byte_cfg(21);
    Transformer<float> model(mc);
    Tokenizer tok = Tokenizer::bytes();
    MCQItem item{"Who wrote it?", {"Ada", "Bob", "Cyd", "Dee"}, 1};
    std::string prompt = "Answer the question.\nQuestion: Who wrote it?\nAnswer:\n";

    int got = mcq_choice_mode(model, tok, item, prompt);
    int best = 0;
    double best_ppl = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < item.choices.size(); ++i) {
        double ppl = detail::continuation_perplexity<float>(model, tok, prompt,
                                                            item.choices[i], nullptr,
                                                            nullptr);
        if (ppl < best_ppl) {
            best_ppl = ppl;
            best = static_cast<int>(i);
        }
    }
    CHECK(got == best);

    // the argmin is invariant under any monotone transform of perplexity,
    // e.g. comparing total NLL instead
    int best_nll = 0;
    double lowest = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < item.choices.size(); ++i) {
        double ppl = detail::continuation_perplexity<float>(model, tok, prompt,
                                                            item.choices[i], nullptr,
                                                            nullptr);
        double nll = std::log(ppl) * tok.encode(item.choices[i]).size();
        if (nll < lowest) {
            lowest = nll;
            best_nll = static_cast<int>(i);
        }
    }
    CHECK(best_nll == got);
}

TEST_CASE("mcq completion mode agrees with sequence perplexity argmin") {
    ModelConfig mc = byte_cfg(22);
    Transformer<float> model(mc);
    Tokenizer tok = Tokenizer::bytes();
    MCQItem item{"The capital is", {"Paris", "Rome", "Lima", "Oslo"}, 0};

    int got = mcq_completion_mode(model, tok, item);
    int best = 0;
    double best_ppl = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < item.choices.size(); ++i) {
        double ppl =
            model.sequence_perplexity(tok.encode(item.stem + " " + item.choices[i]));
        if (ppl < best_ppl) {
            best_ppl = ppl;
            best = static_cast<int>(i);
        }
    }
    CHECK(got == best);

    MCQItem bad{"stem", {"a", "b"}, 0};
    CHECK_THROWS_AS(mcq_completion_mode(model, tok, bad), ConfigError);
}

TEST_CASE("prefix norms are frobenius norms in double") {
    PrefixParams<float> p;
    p.d = 1;
    p.n = 2;
    p.h = 2;
    p.keys = {3.0f, 4.0f, 0.0f, 0.0f};
    p.values = {1.0f, 2.0f, 2.0f, 4.0f};
    auto [kn, vn] = prefix_norms(p);
    CHECK(kn == doctest::Approx(5.0));
    CHECK(vn == doctest::Approx(5.0));
}

TEST_CASE("error analysis categories and hand-checked welch p-values") {
    ModelConfig mc = byte_cfg(23);
    Transformer<float> model(mc);
    Tokenizer tok = Tokenizer::bytes();

    FactRecord learned;
    learned.id = "l";
    learned.triple = {"A", "p", "cat"};
    learned.training_sentence = "A p is cat";
    learned.cloze_sentences = {"A p is", "p of A is", "the p", "A has p", "p: A,"};
    FactRecord missed;
    missed.id = "m";
    missed.triple = {"B", "p", "otter"};
    missed.training_sentence = "B p is a long otter sentence";
    missed.cloze_sentences = {"B p is a much longer stem", "the p of B goes",
                              "regarding B and p we see", "B keeps its p around",
                              "everything about the p of B"};

    auto analysis =
        error_analysis_stats<float>({learned, missed}, {true, false}, model, tok);
    REQUIRE(analysis.train_learned.has_value());
    REQUIRE(analysis.train_non_learned.has_value());
    CHECK(analysis.train_learned->count == 1);
    CHECK(analysis.train_learned->mean_char_len ==
          doctest::Approx(static_cast<double>(learned.training_sentence.size())));
    CHECK(analysis.train_learned->mean_object_char_len == doctest::Approx(3.0));
    CHECK(analysis.train_non_learned->mean_object_char_len == doctest::Approx(5.0));

    REQUIRE(analysis.test_learned.has_value());
    CHECK(analysis.test_learned->count == 5);
    double mean_len = 0;
    for (const auto& s : learned.cloze_sentences) mean_len += s.size();
    CHECK(analysis.test_learned->mean_char_len == doctest::Approx(mean_len / 5));

    // single-observation train columns cannot support a t-test
    CHECK(analysis.p_values.count("train_char_len") == 0);
    // the 5-vs-5 test columns can; verify against a direct computation
    REQUIRE(analysis.p_values.count("test_char_len") == 1);
    std::vector<double> non_l, l;
    for (const auto& s : missed.cloze_sentences) non_l.push_back(s.size());
    for (const auto& s : learned.cloze_sentences) l.push_back(s.size());
    double expect = stats::welch_t_test(non_l, l, stats::Alternative::Greater).p;
    CHECK(analysis.p_values["test_char_len"] == doctest::Approx(expect).epsilon(1e-12));

    // empty category rows are absent, not zero-filled
    auto only_learned = error_analysis_stats<float>({learned}, {true}, model, tok);
    CHECK_FALSE(only_learned.train_non_learned.has_value());
    CHECK_FALSE(only_learned.test_non_learned.has_value());

    CHECK_THROWS_AS(error_analysis_stats<float>({learned}, {true, false}, model, tok),
                    ConfigError);
}
