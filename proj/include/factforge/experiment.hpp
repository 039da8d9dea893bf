#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "factforge/benchmark_gen.hpp"
#include "factforge/eval.hpp"
#include "factforge/model.hpp"
#include "factforge/train.hpp"

namespace factforge {

enum class AdapterKind { Prefix, Lora };

struct SweepSpec {
    std::string dataset_path;
    std::vector<int> k_values = {1, 2, 3, 4, 5, 8, 10, 20, 50, 100, 200};
    AdapterKind adapter = AdapterKind::Prefix;
    std::vector<int> prefix_n = {1};
    std::vector<int> prefix_d = {1};
    LoraConfig lora;
    std::vector<ModelConfig> models = {ModelConfig{}};
    TrainRunConfig train;
    std::string mcq_prompt_template; // rendered per question; {question} placeholder
    uint64_t seed = 0;
    int parallelism = 1;
    // chaos hook for failure-isolation tests; called with the run id before
    // training and may throw
    std::function<void(const std::string&)> fault_hook;
};

// max(5, floor(D/k)) subsets of exactly k distinct fact indices. Disjoint
// partition of a seeded shuffle when floor(D/k) >= 5; otherwise 5 distinct
// independently drawn subsets.
std::vector<std::vector<int>> make_subsets(int fact_count, int k, uint64_t seed);

struct RunRecord {
    std::string run_id;
    std::string model_name;
    int k = 0, n = 0, d = 0;
    int run_index = 0;
    bool failed = false;
    std::string error;
    double accuracy = 0.0;
    std::optional<bool> learning; // absent when the baseline knew every fact
    double final_loss = 0.0;
    double key_norm = 0.0, value_norm = 0.0;
    double mcq_accuracy = 0.0;
};

struct SweepResult {
    std::vector<RunRecord> runs;
    size_t failures = 0;
    std::string summary_path;
};

SweepResult run_sweep(const SweepSpec& spec, const std::string& out_dir);

// Aggregates a sweep directory's summary.csv into per-(model, k, n, d) rows
// with confidence intervals and significance tests against the base adapter
// setting. Returns the report path.
std::string write_report(const std::string& sweep_dir);

std::string model_name(const ModelConfig& mc);
uint64_t config_hash(const SweepSpec& spec);

} // namespace factforge
