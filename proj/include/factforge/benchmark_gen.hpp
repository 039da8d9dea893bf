#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "factforge/fact_pipeline.hpp"

namespace factforge {

enum class GenMode { Remote, Mock };

struct GenEndpointConfig {
    std::string base_url;   // e.g. http://127.0.0.1:8080/generate
    std::string model_name = "vicuna-13b";
    int max_tokens = 96;
    double temperature = 0.7;
    std::chrono::milliseconds request_timeout{30000};
    int max_concurrent = 4;
    GenMode mode = GenMode::Mock;

    void validate() const;
};

// Low-level completion interface. The remote implementation speaks the
// documented HTTP protocol; tests substitute scripted fakes.
class CompletionClient {
public:
    virtual ~CompletionClient() = default;
    virtual std::string complete(const std::string& prompt,
                                 const std::vector<std::string>& stop) = 0;
};

std::unique_ptr<CompletionClient> make_remote_client(const GenEndpointConfig& cfg);

struct PromptTemplates {
    std::string training_sentence;
    std::string cloze;
    std::string question;
    std::string distractors;
    std::string mcq; // shared MCQ evaluation prompt

    static PromptTemplates load(const std::string& dir);
    std::string render(const std::string& tmpl, const Triple& t,
                       const std::string& question_text = "") const;
};

struct FactRecord {
    std::string id;
    Triple triple;
    std::string training_sentence;
    std::vector<std::string> cloze_sentences; // exactly 5
    std::string question;
    std::vector<std::string> choices; // exactly 4
    int answer_index = -1;
};

struct GenAudit {
    std::string record_id;
    std::vector<std::string> prompts;
    std::vector<std::string> completions;
    std::vector<std::string> outcomes;
    bool manual_review = false;
};

std::string fact_id(const Triple& t);

// Standalone validator; returns human-readable problems, empty when valid.
std::vector<std::string> validate_fact_record(const FactRecord& rec);

// case-insensitive ASCII substring test, shared with the eval harness
bool contains_ci(const std::string& haystack, const std::string& needle);

class BenchmarkGenerator {
public:
    BenchmarkGenerator(GenEndpointConfig cfg, PromptTemplates templates,
                       uint64_t seed, CompletionClient* client = nullptr);

    std::string gen_training_sentence(const Triple& t, GenAudit& audit);
    std::vector<std::string> gen_cloze_sentences(const Triple& t, GenAudit& audit);
    std::string gen_question(const Triple& t, GenAudit& audit);
    std::vector<std::string> gen_distractors(const Triple& t,
                                             const std::string& question,
                                             GenAudit& audit);
    FactRecord assemble_fact_record(const Triple& t, std::string training_sentence,
                                    std::vector<std::string> cloze_sentences,
                                    std::string question,
                                    std::vector<std::string> distractors);

    // One full record; throws ValidationError / RemoteError on failure.
    FactRecord generate_record(const Triple& t, GenAudit& audit);

private:
    GenEndpointConfig cfg_;
    PromptTemplates templates_;
    uint64_t seed_;
    CompletionClient* client_; // not owned; required in remote mode
    std::unique_ptr<CompletionClient> owned_client_;

    std::string complete_logged(const std::string& prompt,
                                const std::vector<std::string>& stop, GenAudit& audit);
};

struct SynthesizeSummary {
    size_t input = 0;
    size_t generated = 0;
    size_t quarantined = 0;
};

jsonl::json fact_record_to_json(const FactRecord& rec);
FactRecord fact_record_from_json(const jsonl::json& j);

std::vector<FactRecord> load_fact_records(std::istream& in);

// One FactRecord per surviving triple; per-record failures go to the audit
// stream with a reason and never abort the batch. Output is written in input
// order and is byte-identical across reruns in mock mode.
SynthesizeSummary synthesize_benchmark(const std::vector<Triple>& triples,
                                       const GenEndpointConfig& cfg,
                                       const PromptTemplates& templates,
                                       uint64_t seed, std::ostream& dataset,
                                       std::ostream& audit_out,
                                       CompletionClient* client = nullptr);

} // namespace factforge
