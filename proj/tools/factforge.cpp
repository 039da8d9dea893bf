// factforge: build fact benchmarks from knowledge-base delta streams and
// measure prefix/LoRA fact capacity on a desk-scale transformer.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "factforge/benchmark_gen.hpp"
#include "factforge/errors.hpp"
#include "factforge/eval.hpp"
#include "factforge/experiment.hpp"
#include "factforge/fact_pipeline.hpp"
#include "factforge/serialize.hpp"
#include "factforge/train.hpp"

using namespace factforge;

namespace {

#ifndef FACTFORGE_PROMPTS_DIR
#define FACTFORGE_PROMPTS_DIR "data/prompts"
#endif

struct CommonOpts {
    std::string config_path;
    json config; // parsed config file, may be empty
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    return read_json_file(path);
}

// config-file value used unless the flag was given on the command line
template <typename T>
void apply(const json& section, const char* key, T& value, const CLI::Option* opt) {
    if (opt && opt->count() > 0) return;
    if (section.contains(key)) value = section[key].get<T>();
}

ModelConfig model_from(const json& cfg, CLI::App* app, ModelConfig mc) {
    const json section = cfg.value("model", json::object());
    apply(section, "vocab_size", mc.vocab_size, app->get_option_no_throw("--vocab-size"));
    apply(section, "hidden_dim", mc.hidden_dim, app->get_option_no_throw("--hidden-dim"));
    apply(section, "num_layers", mc.num_layers, app->get_option_no_throw("--layers"));
    apply(section, "num_heads", mc.num_heads, app->get_option_no_throw("--heads"));
    apply(section, "ffn_dim", mc.ffn_dim, app->get_option_no_throw("--ffn-dim"));
    apply(section, "max_seq_len", mc.max_seq_len, app->get_option_no_throw("--max-seq-len"));
    apply(section, "seed", mc.seed, app->get_option_no_throw("--model-seed"));
    mc.validate();
    return mc;
}

void add_model_flags(CLI::App* app, ModelConfig& mc) {
    app->add_option("--vocab-size", mc.vocab_size);
    app->add_option("--hidden-dim", mc.hidden_dim);
    app->add_option("--layers", mc.num_layers);
    app->add_option("--heads", mc.num_heads);
    app->add_option("--ffn-dim", mc.ffn_dim);
    app->add_option("--max-seq-len", mc.max_seq_len);
    app->add_option("--model-seed", mc.seed);
}

TrainRunConfig train_from(const json& cfg, CLI::App* app, TrainRunConfig tc) {
    const json section = cfg.value("train", json::object());
    apply(section, "max_epochs", tc.max_epochs, app->get_option_no_throw("--epochs"));
    apply(section, "initial_lr", tc.initial_lr, app->get_option_no_throw("--lr"));
    apply(section, "weight_decay", tc.weight_decay, app->get_option_no_throw("--weight-decay"));
    apply(section, "patience_epochs", tc.patience_epochs, app->get_option_no_throw("--patience"));
    apply(section, "min_lr", tc.min_lr, app->get_option_no_throw("--min-lr"));
    tc.validate();
    return tc;
}

void add_train_flags(CLI::App* app, TrainRunConfig& tc) {
    app->add_option("--epochs", tc.max_epochs);
    app->add_option("--lr", tc.initial_lr);
    app->add_option("--weight-decay", tc.weight_decay);
    app->add_option("--patience", tc.patience_epochs);
    app->add_option("--min-lr", tc.min_lr);
}

std::vector<FactRecord> read_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read dataset: " + path);
    return load_fact_records(in);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"factforge: fact benchmark forging and prefix capacity workbench"};
    app.require_subcommand(1);
    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; flags override it")
        ->check(CLI::ExistingFile);

    // ---- extract ----
    auto* extract = app.add_subcommand("extract", "delta stream -> clean triples");
    std::string deltas_path, labels_path, out_path, quarantine_path;
    uint64_t seed = 0;
    extract->add_option("--deltas", deltas_path)->required();
    extract->add_option("--labels", labels_path)->required();
    extract->add_option("--seed", seed);
    extract->add_option("--out", out_path)->required();
    extract->add_option("--quarantine", quarantine_path);

    // ---- synthesize ----
    auto* synth = app.add_subcommand("synthesize", "triples -> FactRecord dataset");
    std::string facts_path, endpoint, out_dir, prompts_dir = FACTFORGE_PROMPTS_DIR;
    bool mock = false;
    GenEndpointConfig gen_cfg;
    synth->add_option("--facts", facts_path)->required();
    synth->add_option("--endpoint", endpoint);
    synth->add_flag("--mock", mock);
    synth->add_option("--seed", seed);
    synth->add_option("--out", out_dir)->required();
    synth->add_option("--prompts", prompts_dir);
    synth->add_option("--model-name", gen_cfg.model_name);
    synth->add_option("--max-tokens", gen_cfg.max_tokens);
    synth->add_option("--temperature", gen_cfg.temperature);
    synth->add_option("--concurrency", gen_cfg.max_concurrent);

    // ---- subsets ----
    auto* subsets_cmd = app.add_subcommand("subsets", "seeded training subsets");
    int subset_count = 0, subset_k = 0;
    std::string subsets_out;
    subsets_cmd->add_option("--count", subset_count)->required();
    subsets_cmd->add_option("--k", subset_k)->required();
    subsets_cmd->add_option("--seed", seed);
    subsets_cmd->add_option("--out", subsets_out);

    // ---- train ----
    auto* train_cmd = app.add_subcommand("train", "train one adapter on a fact subset");
    std::string dataset_path, indices_csv, adapter_kind = "prefix", adapter_out;
    ModelConfig mc;
    TrainRunConfig tc;
    PrefixConfig pc;
    LoraConfig lc;
    train_cmd->add_option("--dataset", dataset_path)->required();
    train_cmd->add_option("--indices", indices_csv, "comma-separated fact indices")
        ->required();
    train_cmd->add_option("--adapter", adapter_kind)
        ->check(CLI::IsMember({"prefix", "lora"}));
    train_cmd->add_option("--n", pc.n);
    train_cmd->add_option("--d", pc.d);
    train_cmd->add_option("--rank", lc.rank);
    train_cmd->add_option("--alpha", lc.alpha);
    train_cmd->add_option("--seed", seed);
    train_cmd->add_option("--out", adapter_out)->required();
    add_model_flags(train_cmd, mc);
    add_train_flags(train_cmd, tc);

    // ---- evaluate ----
    auto* eval_cmd = app.add_subcommand("evaluate", "cloze accuracy of a model(+adapter)");
    std::string adapter_path;
    eval_cmd->add_option("--dataset", dataset_path)->required();
    eval_cmd->add_option("--adapter", adapter_path);
    eval_cmd->add_option("--out", out_path);
    add_model_flags(eval_cmd, mc);

    // ---- sweep ----
    auto* sweep_cmd = app.add_subcommand("sweep", "full macro-experiment sweep");
    std::string k_csv, n_csv, d_csv;
    int parallelism = 1;
    sweep_cmd->add_option("--dataset", dataset_path);
    sweep_cmd->add_option("--out", out_dir);
    sweep_cmd->add_option("--adapter", adapter_kind)
        ->check(CLI::IsMember({"prefix", "lora"}));
    sweep_cmd->add_option("--k", k_csv, "comma-separated k values");
    sweep_cmd->add_option("--n", n_csv, "comma-separated prefix lengths");
    sweep_cmd->add_option("--d", d_csv, "comma-separated prefix depths");
    sweep_cmd->add_option("--rank", lc.rank);
    sweep_cmd->add_option("--alpha", lc.alpha);
    sweep_cmd->add_option("--seed", seed);
    sweep_cmd->add_option("--parallelism", parallelism);
    sweep_cmd->add_option("--prompts", prompts_dir);
    add_model_flags(sweep_cmd, mc);
    add_train_flags(sweep_cmd, tc);

    // ---- report ----
    auto* report_cmd = app.add_subcommand("report", "aggregate a sweep directory");
    std::string sweep_dir;
    report_cmd->add_option("--sweep", sweep_dir)->required();

    // ---- regress ----
    auto* regress_cmd = app.add_subcommand("regress", "MCQ regression over external items");
    std::string mcq_path, mcq_mode = "choice";
    regress_cmd->add_option("--mcq", mcq_path)->required();
    regress_cmd->add_option("--mode", mcq_mode)
        ->check(CLI::IsMember({"choice", "completion"}));
    regress_cmd->add_option("--adapter", adapter_path);
    regress_cmd->add_option("--prompts", prompts_dir);
    add_model_flags(regress_cmd, mc);

    CLI11_PARSE(app, argc, argv);

    try {
        json config = load_config(config_path);
        if (config.contains("seed") && seed == 0) seed = config["seed"].get<uint64_t>();

        auto parse_int_csv = [](const std::string& s) {
            std::vector<int> out;
            std::stringstream ss(s);
            std::string item;
            while (std::getline(ss, item, ',')) {
                if (!item.empty()) out.push_back(std::stoi(item));
            }
            return out;
        };

        if (*extract) {
            std::ifstream deltas(deltas_path), labels(labels_path);
            if (!deltas) throw ConfigError("cannot read " + deltas_path);
            if (!labels) throw ConfigError("cannot read " + labels_path);
            std::ofstream out(out_path);
            if (!out) throw ConfigError("cannot write " + out_path);
            std::ofstream quarantine(quarantine_path.empty() ? out_path + ".quarantine"
                                                             : quarantine_path);
            ExtractSummary s =
                run_extract(deltas, labels, seed, out, quarantine, std::cerr);
            std::cout << "parsed " << s.parsed << ", malformed " << s.malformed
                      << ", rejected " << s.rejected << ", unresolved " << s.unresolved
                      << ", deduped " << s.deduped << ", emitted " << s.emitted << "\n";
            return 0;
        }

        if (*synth) {
            if (mock == endpoint.empty() && !mock) {
                throw ConfigError("pass exactly one of --endpoint or --mock");
            }
            gen_cfg.mode = mock ? GenMode::Mock : GenMode::Remote;
            gen_cfg.base_url = endpoint;
            std::ifstream facts_in(facts_path);
            if (!facts_in) throw ConfigError("cannot read " + facts_path);
            std::vector<Triple> triples;
            jsonl::for_each(
                facts_in,
                [&](const jsonl::json& j, size_t) {
                    triples.push_back({j.at("subject").get<std::string>(),
                                       j.at("predicate").get<std::string>(),
                                       j.at("object").get<std::string>()});
                },
                [](const jsonl::LineDiagnostic& d) {
                    throw ValidationError("malformed triple at line " +
                                          std::to_string(d.line_number));
                });
            std::filesystem::create_directories(out_dir);
            std::ofstream dataset(out_dir + "/dataset.jsonl");
            std::ofstream audit(out_dir + "/audit.jsonl");
            PromptTemplates templates = PromptTemplates::load(prompts_dir);
            SynthesizeSummary s = synthesize_benchmark(triples, gen_cfg, templates, seed,
                                                       dataset, audit);
            std::cout << "input " << s.input << ", generated " << s.generated
                      << ", quarantined " << s.quarantined << "\n";
            return 0;
        }

        if (*subsets_cmd) {
            auto subsets = make_subsets(subset_count, subset_k, seed);
            json j = json::array();
            for (const auto& s : subsets) j.push_back(s);
            if (subsets_out.empty()) {
                std::cout << j.dump(2) << "\n";
            } else {
                write_json_file(subsets_out, j);
            }
            return 0;
        }

        if (*train_cmd) {
            mc = model_from(config, train_cmd, mc);
            tc = train_from(config, train_cmd, tc);
            tc.seed = seed;
            auto records = read_dataset(dataset_path);
            std::vector<std::string> sentences;
            for (int idx : parse_int_csv(indices_csv)) {
                if (idx < 0 || idx >= static_cast<int>(records.size())) {
                    throw ConfigError("fact index out of range: " + std::to_string(idx));
                }
                sentences.push_back(records[idx].training_sentence);
            }
            Transformer<float> model(mc);
            Tokenizer tokenizer = Tokenizer::bytes();
            std::filesystem::create_directories(adapter_out);
            if (adapter_kind == "prefix") {
                auto result = train_prefix(model, pc, sentences, tokenizer, tc);
                write_json_file(adapter_out + "/adapter.json",
                                prefix_to_json(result.prefix, mc));
                write_json_file(adapter_out + "/trace.json", trace_to_json(result.trace));
                std::cout << "final loss " << result.trace.final_loss << " after "
                          << result.trace.epochs_run << " epochs\n";
            } else {
                auto result = train_lora(model, lc, sentences, tokenizer, tc);
                write_json_file(adapter_out + "/adapter.json",
                                lora_to_json(result.lora, mc));
                write_json_file(adapter_out + "/trace.json", trace_to_json(result.trace));
                std::cout << "final loss " << result.trace.final_loss << " after "
                          << result.trace.epochs_run << " epochs\n";
            }
            return 0;
        }

        if (*eval_cmd) {
            mc = model_from(config, eval_cmd, mc);
            auto records = read_dataset(dataset_path);
            Transformer<float> model(mc);
            Tokenizer tokenizer = Tokenizer::bytes();
            PredictionReport report;
            double key_norm = 0.0, value_norm = 0.0;
            if (!adapter_path.empty()) {
                json aj = read_json_file(adapter_path);
                if (aj.value("kind", "") == "prefix") {
                    auto prefix = prefix_from_json<float>(aj, mc);
                    report = prediction_accuracy(model, tokenizer, records, &prefix);
                    std::tie(key_norm, value_norm) = prefix_norms(prefix);
                } else {
                    auto lora = lora_from_json<float>(aj, mc);
                    report = prediction_accuracy<float>(model, tokenizer, records, nullptr, &lora);
                }
            } else {
                report = prediction_accuracy(model, tokenizer, records);
            }
            json j = {{"accuracy", report.accuracy},
                      {"sentences", report.sentences_evaluated},
                      {"correct", report.correct},
                      {"per_fact_correct", report.per_fact_correct},
                      {"key_norm", key_norm},
                      {"value_norm", value_norm}};
            if (out_path.empty()) {
                std::cout << j.dump(2) << "\n";
            } else {
                write_json_file(out_path, j);
            }
            return 0;
        }

        if (*sweep_cmd) {
            SweepSpec spec;
            const json section = config.value("sweep", json::object());
            apply(section, "dataset", spec.dataset_path,
                  sweep_cmd->get_option_no_throw("--dataset"));
            if (!dataset_path.empty()) spec.dataset_path = dataset_path;
            std::string sweep_out = out_dir;
            apply(section, "out", sweep_out, sweep_cmd->get_option_no_throw("--out"));
            if (spec.dataset_path.empty()) throw ConfigError("sweep needs --dataset");
            if (sweep_out.empty()) throw ConfigError("sweep needs --out");
            if (!k_csv.empty()) spec.k_values = parse_int_csv(k_csv);
            else if (section.contains("k_values"))
                spec.k_values = section["k_values"].get<std::vector<int>>();
            if (!n_csv.empty()) spec.prefix_n = parse_int_csv(n_csv);
            else if (section.contains("prefix_n"))
                spec.prefix_n = section["prefix_n"].get<std::vector<int>>();
            if (!d_csv.empty()) spec.prefix_d = parse_int_csv(d_csv);
            else if (section.contains("prefix_d"))
                spec.prefix_d = section["prefix_d"].get<std::vector<int>>();
            spec.adapter =
                adapter_kind == "lora" ? AdapterKind::Lora : AdapterKind::Prefix;
            spec.lora = lc;
            spec.models = {model_from(config, sweep_cmd, mc)};
            spec.train = train_from(config, sweep_cmd, tc);
            spec.seed = seed;
            spec.parallelism = parallelism;
            spec.mcq_prompt_template = PromptTemplates::load(prompts_dir).mcq;
            SweepResult result = run_sweep(spec, sweep_out);
            std::cout << result.runs.size() << " runs, " << result.failures
                      << " failures, summary at " << result.summary_path << "\n";
            return result.failures == result.runs.size() ? 1 : 0;
        }

        if (*report_cmd) {
            std::cout << "report at " << write_report(sweep_dir) << "\n";
            return 0;
        }

        if (*regress_cmd) {
            mc = model_from(config, regress_cmd, mc);
            Transformer<float> model(mc);
            Tokenizer tokenizer = Tokenizer::bytes();
            std::optional<PrefixParams<float>> prefix;
            std::optional<LoraParams<float>> lora;
            if (!adapter_path.empty()) {
                json aj = read_json_file(adapter_path);
                if (aj.value("kind", "") == "prefix") prefix = prefix_from_json<float>(aj, mc);
                else lora = lora_from_json<float>(aj, mc);
            }
            PromptTemplates templates = PromptTemplates::load(prompts_dir);
            std::ifstream in(mcq_path);
            if (!in) throw ConfigError("cannot read " + mcq_path);
            size_t total = 0, correct = 0;
            jsonl::for_each(
                in,
                [&](const jsonl::json& j, size_t) {
                    MCQItem item;
                    item.stem = j.contains("question")
                                    ? j.at("question").get<std::string>()
                                    : j.at("stem").get<std::string>();
                    item.choices = j.at("choices").get<std::vector<std::string>>();
                    item.answer_index = j.at("answer_index").get<int>();
                    int chosen;
                    if (mcq_mode == "choice") {
                        std::string prompt = templates.render(
                            templates.mcq, Triple{}, item.stem);
                        chosen = mcq_choice_mode(model, tokenizer, item, prompt,
                                                 prefix ? &*prefix : nullptr,
                                                 lora ? &*lora : nullptr);
                    } else {
                        chosen = mcq_completion_mode(model, tokenizer, item,
                                                     prefix ? &*prefix : nullptr,
                                                     lora ? &*lora : nullptr);
                    }
                    ++total;
                    if (chosen == item.answer_index) ++correct;
                },
                [](const jsonl::LineDiagnostic& d) {
                    throw ValidationError("malformed MCQ line " +
                                          std::to_string(d.line_number));
                });
            if (total == 0) throw ConfigError("no MCQ items");
            std::cout << "mcq accuracy " << static_cast<double>(correct) / total << " ("
                      << correct << "/" << total << ")\n";
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
