#include "factforge/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "factforge/errors.hpp"
#include "factforge/rng.hpp"
#include "factforge/serialize.hpp"
#include "factforge/stats.hpp"
#include "factforge/tokenizer.hpp"

namespace fs = std::filesystem;

namespace factforge {

namespace {

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", x);
    return buf;
}

std::string iso_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

std::string replace_question(std::string tmpl, const std::string& question) {
    const std::string key = "{question}";
    size_t pos;
    while ((pos = tmpl.find(key)) != std::string::npos) {
        tmpl.replace(pos, key.size(), question);
    }
    return tmpl;
}

} // namespace

std::string model_name(const ModelConfig& mc) {
    return "h" + std::to_string(mc.hidden_dim) + "L" + std::to_string(mc.num_layers);
}

uint64_t config_hash(const SweepSpec& spec) {
    json j;
    j["k_values"] = spec.k_values;
    j["adapter"] = spec.adapter == AdapterKind::Prefix ? "prefix" : "lora";
    j["prefix_n"] = spec.prefix_n;
    j["prefix_d"] = spec.prefix_d;
    j["lora"] = {{"rank", spec.lora.rank},
                 {"alpha", spec.lora.alpha},
                 {"target_query", spec.lora.target_query},
                 {"target_value", spec.lora.target_value}};
    j["models"] = json::array();
    for (const auto& mc : spec.models) j["models"].push_back(model_config_to_json(mc));
    j["train"] = {{"max_epochs", spec.train.max_epochs},
                  {"weight_decay", spec.train.weight_decay},
                  {"initial_lr", spec.train.initial_lr},
                  {"patience_epochs", spec.train.patience_epochs},
                  {"min_lr", spec.train.min_lr}};
    j["seed"] = spec.seed;
    return fnv1a64(j.dump());
}

std::vector<std::vector<int>> make_subsets(int fact_count, int k, uint64_t seed) {
    if (k < 1 || k > fact_count) {
        throw ConfigError("make_subsets: k must satisfy 1 <= k <= fact_count");
    }
    const int floor_dk = fact_count / k;
    const int count = std::max(5, floor_dk);
    std::vector<std::vector<int>> subsets;
    Rng rng = Rng(seed).split("subsets");
    if (floor_dk >= 5) {
        // disjoint partition of a shuffled index list
        std::vector<int> indices(fact_count);
        for (int i = 0; i < fact_count; ++i) indices[i] = i;
        rng.shuffle(indices);
        for (int s = 0; s < count; ++s) {
            std::vector<int> subset(indices.begin() + static_cast<size_t>(s) * k,
                                    indices.begin() + static_cast<size_t>(s + 1) * k);
            std::sort(subset.begin(), subset.end());
            subsets.push_back(std::move(subset));
        }
        return subsets;
    }
    // not enough facts for 5 disjoint subsets: draw 5 distinct random subsets
    std::set<std::vector<int>> seen;
    int attempts = 0;
    while (static_cast<int>(subsets.size()) < count) {
        std::vector<int> indices(fact_count);
        for (int i = 0; i < fact_count; ++i) indices[i] = i;
        rng.shuffle(indices);
        std::vector<int> subset(indices.begin(), indices.begin() + k);
        std::sort(subset.begin(), subset.end());
        // identical subsets are redrawn; when too few distinct subsets exist
        // at all (tiny fact pools) repeats are allowed after many attempts
        if (seen.insert(subset).second || ++attempts > 1000) {
            subsets.push_back(std::move(subset));
        }
    }
    return subsets;
}

namespace {

struct RunTask {
    const SweepSpec* spec;
    const Transformer<float>* model;
    std::string model_tag;
    int k = 0, n = 0, d = 0; // n=d=0 for lora
    int run_index = 0;
    std::vector<int> subset;
    std::vector<FactRecord> records;
    std::string run_dir;
};

RunRecord execute_run(const RunTask& task) {
    const SweepSpec& spec = *task.spec;
    RunRecord rr;
    rr.model_name = task.model_tag;
    rr.k = task.k;
    rr.n = task.n;
    rr.d = task.d;
    rr.run_index = task.run_index;
    char idbuf[32];
    std::snprintf(idbuf, sizeof idbuf, "r%03d", task.run_index);
    rr.run_id = task.model_tag + "_k" + std::to_string(task.k) +
                (spec.adapter == AdapterKind::Prefix
                     ? "_n" + std::to_string(task.n) + "_d" + std::to_string(task.d)
                     : "_lora") +
                "_" + idbuf;

    Tokenizer tokenizer = Tokenizer::bytes();
    try {
        if (spec.fault_hook) spec.fault_hook(rr.run_id);

        std::vector<std::string> sentences;
        std::vector<std::string> fact_ids;
        for (const FactRecord& rec : task.records) {
            sentences.push_back(rec.training_sentence);
            fact_ids.push_back(rec.id);
        }
        TrainRunConfig train_cfg = spec.train;
        train_cfg.seed = fnv1a64(rr.run_id, spec.seed);

        PredictionReport baseline =
            prediction_accuracy<float>(*task.model, tokenizer, task.records);
        PredictionReport tuned;
        TrainTrace trace;
        json adapter_json;
        if (spec.adapter == AdapterKind::Prefix) {
            PrefixConfig pc{task.n, task.d};
            auto result =
                train_prefix(*task.model, pc, sentences, tokenizer, train_cfg);
            trace = result.trace;
            tuned = prediction_accuracy(*task.model, tokenizer, task.records,
                                        &result.prefix);
            auto [kn, vn] = prefix_norms(result.prefix);
            rr.key_norm = kn;
            rr.value_norm = vn;
            adapter_json = prefix_to_json(result.prefix, task.model->config());
            if (!spec.mcq_prompt_template.empty()) {
                int mcq_correct = 0;
                for (const FactRecord& rec : task.records) {
                    MCQItem item{rec.question, rec.choices, rec.answer_index};
                    std::string prompt =
                        replace_question(spec.mcq_prompt_template, rec.question);
                    if (mcq_choice_mode(*task.model, tokenizer, item, prompt,
                                        &result.prefix) == rec.answer_index) {
                        ++mcq_correct;
                    }
                }
                rr.mcq_accuracy =
                    static_cast<double>(mcq_correct) / task.records.size();
            }
        } else {
            auto result =
                train_lora(*task.model, spec.lora, sentences, tokenizer, train_cfg);
            trace = result.trace;
            tuned = prediction_accuracy<float>(*task.model, tokenizer, task.records,
                                               nullptr, &result.lora);
            adapter_json = lora_to_json(result.lora, task.model->config());
            if (!spec.mcq_prompt_template.empty()) {
                int mcq_correct = 0;
                for (const FactRecord& rec : task.records) {
                    MCQItem item{rec.question, rec.choices, rec.answer_index};
                    std::string prompt =
                        replace_question(spec.mcq_prompt_template, rec.question);
                    if (mcq_choice_mode<float>(*task.model, tokenizer, item, prompt,
                                               nullptr, &result.lora) == rec.answer_index) {
                        ++mcq_correct;
                    }
                }
                rr.mcq_accuracy =
                    static_cast<double>(mcq_correct) / task.records.size();
            }
        }
        rr.accuracy = tuned.accuracy;
        rr.final_loss = trace.final_loss;

        // learning flag: restrict to facts the baseline got entirely wrong
        bool any_unknown = false, any_learned = false;
        for (const std::string& id : fact_ids) {
            if (baseline.per_fact_correct.at(id) != 0) continue;
            any_unknown = true;
            if (tuned.per_fact_correct.at(id) > 0) any_learned = true;
        }
        if (any_unknown) rr.learning = any_learned;

        fs::create_directories(task.run_dir);
        write_json_file(task.run_dir + "/adapter.json", adapter_json);
        write_json_file(task.run_dir + "/trace.json", trace_to_json(trace));
        json report = {{"accuracy", rr.accuracy},
                       {"final_loss", rr.final_loss},
                       {"key_norm", rr.key_norm},
                       {"value_norm", rr.value_norm},
                       {"mcq_accuracy", rr.mcq_accuracy},
                       {"baseline_accuracy", baseline.accuracy},
                       {"per_fact_correct", tuned.per_fact_correct},
                       {"baseline_per_fact_correct", baseline.per_fact_correct}};
        if (rr.learning) report["learning"] = *rr.learning;
        write_json_file(task.run_dir + "/report.json", report);
        json manifest = {{"run_id", rr.run_id},
                         {"config_hash", config_hash(spec)},
                         {"seed", train_cfg.seed},
                         {"subset_fact_ids", fact_ids},
                         {"artifacts",
                          {{"adapter", task.run_dir + "/adapter.json"},
                           {"trace", task.run_dir + "/trace.json"},
                           {"report", task.run_dir + "/report.json"}}},
                         {"timestamp", iso_now()},
                         {"metrics",
                          {{"accuracy", rr.accuracy}, {"final_loss", rr.final_loss}}}};
        write_json_file(task.run_dir + "/manifest.json", manifest);
    } catch (const std::exception& e) {
        rr.failed = true;
        rr.error = e.what();
        fs::create_directories(task.run_dir);
        write_json_file(task.run_dir + "/manifest.json",
                        {{"run_id", rr.run_id},
                         {"status", "failed"},
                         {"error", rr.error},
                         {"timestamp", iso_now()}});
    }
    return rr;
}

} // namespace

SweepResult run_sweep(const SweepSpec& spec, const std::string& out_dir) {
    std::ifstream dataset_in(spec.dataset_path);
    if (!dataset_in) throw ConfigError("cannot read dataset: " + spec.dataset_path);
    std::vector<FactRecord> all_records = load_fact_records(dataset_in);
    const int D = static_cast<int>(all_records.size());
    if (D == 0) throw ConfigError("dataset is empty");
    for (int k : spec.k_values) {
        if (k < 1 || k > D) {
            throw ConfigError("k=" + std::to_string(k) + " outside [1, " +
                              std::to_string(D) + "]");
        }
    }

    fs::create_directories(fs::path(out_dir) / "runs");

    std::vector<std::pair<int, int>> settings; // (n, d); (0,0) for lora
    if (spec.adapter == AdapterKind::Prefix) {
        for (int n : spec.prefix_n) {
            for (int d : spec.prefix_d) settings.emplace_back(n, d);
        }
    } else {
        settings.emplace_back(0, 0);
    }

    std::vector<std::unique_ptr<Transformer<float>>> models;
    for (const ModelConfig& mc : spec.models) {
        models.push_back(std::make_unique<Transformer<float>>(mc));
    }

    std::vector<RunTask> tasks;
    for (size_t mi = 0; mi < spec.models.size(); ++mi) {
        std::string tag = model_name(spec.models[mi]);
        for (int k : spec.k_values) {
            // subsets are reused across adapter settings for comparability
            auto subsets = make_subsets(D, k, fnv1a64(tag + "/k" + std::to_string(k),
                                                      spec.seed));
            for (auto [n, d] : settings) {
                for (size_t r = 0; r < subsets.size(); ++r) {
                    RunTask task;
                    task.spec = &spec;
                    task.model = models[mi].get();
                    task.model_tag = tag;
                    task.k = k;
                    task.n = n;
                    task.d = d;
                    task.run_index = static_cast<int>(r);
                    task.subset = subsets[r];
                    for (int idx : subsets[r]) task.records.push_back(all_records[idx]);
                    tasks.push_back(std::move(task));
                }
            }
        }
    }
    for (RunTask& task : tasks) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof idbuf, "r%03d", task.run_index);
        std::string id = task.model_tag + "_k" + std::to_string(task.k) +
                         (spec.adapter == AdapterKind::Prefix
                              ? "_n" + std::to_string(task.n) + "_d" + std::to_string(task.d)
                              : "_lora") +
                         "_" + idbuf;
        task.run_dir = (fs::path(out_dir) / "runs" / id).string();
    }

    SweepResult result;
    result.runs.resize(tasks.size());
    size_t workers = std::max(1, spec.parallelism);
    if (workers <= 1 || tasks.size() <= 1) {
        for (size_t i = 0; i < tasks.size(); ++i) result.runs[i] = execute_run(tasks[i]);
    } else {
        std::mutex m;
        size_t next = 0;
        std::vector<std::thread> pool;
        for (size_t w = 0; w < std::min(workers, tasks.size()); ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    size_t i;
                    {
                        std::lock_guard<std::mutex> lock(m);
                        if (next >= tasks.size()) return;
                        i = next++;
                    }
                    result.runs[i] = execute_run(tasks[i]);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    result.summary_path = (fs::path(out_dir) / "summary.csv").string();
    std::ofstream csv(result.summary_path);
    csv << "k,n,d,model,run,accuracy,learning,final_loss,key_norm,value_norm,mcq_acc\n";
    size_t ok = 0;
    for (const RunRecord& rr : result.runs) {
        if (rr.failed) {
            ++result.failures;
            continue;
        }
        ++ok;
        csv << rr.k << ',' << rr.n << ',' << rr.d << ',' << rr.model_name << ','
            << rr.run_id << ',' << fmt(rr.accuracy) << ','
            << (rr.learning ? (*rr.learning ? "1" : "0") : "") << ','
            << fmt(rr.final_loss) << ',' << fmt(rr.key_norm) << ','
            << fmt(rr.value_norm) << ',' << fmt(rr.mcq_accuracy) << '\n';
    }
    csv.close();

    json failures = json::array();
    for (const RunRecord& rr : result.runs) {
        if (rr.failed) failures.push_back({{"run_id", rr.run_id}, {"error", rr.error}});
    }
    write_json_file((fs::path(out_dir) / "failures.json").string(), failures);

    if (ok == 0) throw ReportError("all sweep runs failed");
    return result;
}

std::string write_report(const std::string& sweep_dir) {
    std::ifstream csv(fs::path(sweep_dir) / "summary.csv");
    if (!csv) throw ReportError("no summary.csv in " + sweep_dir);
    std::string line;
    std::getline(csv, line); // header
    struct Group {
        std::vector<double> accuracy, loss, key_norm, value_norm, mcq;
        long long learning = 0, eligible = 0;
    };
    std::map<std::tuple<std::string, int, int, int>, Group> groups;
    size_t rows = 0;
    while (std::getline(csv, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() < 11) throw ReportError("malformed summary row: " + line);
        ++rows;
        Group& g = groups[{f[3], std::stoi(f[0]), std::stoi(f[1]), std::stoi(f[2])}];
        g.accuracy.push_back(std::stod(f[5]));
        if (!f[6].empty()) {
            ++g.eligible;
            g.learning += std::stoi(f[6]);
        }
        g.loss.push_back(std::stod(f[7]));
        g.key_norm.push_back(std::stod(f[8]));
        g.value_norm.push_back(std::stod(f[9]));
        g.mcq.push_back(std::stod(f[10]));
    }
    if (rows == 0) throw ReportError("summary.csv has no successful runs");

    // base setting per (model, k): smallest (n, d) present
    std::map<std::pair<std::string, int>, std::pair<int, int>> base_setting;
    for (const auto& [key, g] : groups) {
        auto mk = std::make_pair(std::get<0>(key), std::get<1>(key));
        auto nd = std::make_pair(std::get<2>(key), std::get<3>(key));
        auto it = base_setting.find(mk);
        if (it == base_setting.end() || nd < it->second) base_setting[mk] = nd;
    }

    std::string path = (fs::path(sweep_dir) / "report.csv").string();
    std::ofstream out(path);
    out << "model,k,n,d,runs,mean_accuracy,acc_ci_lo,acc_ci_hi,ci_degenerate,"
           "plm,plm_ci_lo,plm_ci_hi,median_loss,"
           "key_norm_q25,key_norm_med,key_norm_q75,"
           "value_norm_q25,value_norm_med,value_norm_q75,"
           "mean_mcq,acc_p_vs_base,plm_p_vs_base\n";
    for (const auto& [key, g] : groups) {
        const auto& [model, k, n, d] = key;
        stats::Interval acc_ci = stats::mean_interval(g.accuracy);
        out << model << ',' << k << ',' << n << ',' << d << ',' << g.accuracy.size()
            << ',' << fmt(stats::mean(g.accuracy)) << ',' << fmt(acc_ci.lo) << ','
            << fmt(acc_ci.hi) << ',' << (acc_ci.degenerate ? 1 : 0) << ',';
        if (g.eligible > 0) {
            stats::Interval plm_ci = stats::wilson_interval(g.learning, g.eligible);
            out << fmt(static_cast<double>(g.learning) / g.eligible) << ','
                << fmt(plm_ci.lo) << ',' << fmt(plm_ci.hi) << ',';
        } else {
            out << ",,,";
        }
        out << fmt(stats::median(g.loss)) << ',' << fmt(stats::quantile(g.key_norm, 0.25))
            << ',' << fmt(stats::median(g.key_norm)) << ','
            << fmt(stats::quantile(g.key_norm, 0.75)) << ','
            << fmt(stats::quantile(g.value_norm, 0.25)) << ','
            << fmt(stats::median(g.value_norm)) << ','
            << fmt(stats::quantile(g.value_norm, 0.75)) << ','
            << fmt(stats::mean(g.mcq)) << ',';
        auto base_nd = base_setting[{model, k}];
        if (std::make_pair(n, d) != base_nd) {
            auto bit = groups.find({model, k, base_nd.first, base_nd.second});
            if (bit != groups.end()) {
                const Group& base = bit->second;
                try {
                    out << fmt(stats::welch_t_test(g.accuracy, base.accuracy,
                                                   stats::Alternative::Greater)
                                   .p);
                } catch (const DegenerateSample&) {
                }
                out << ',';
                try {
                    if (g.eligible > 0 && base.eligible > 0) {
                        out << fmt(stats::z_test_proportions(g.learning, g.eligible,
                                                             base.learning, base.eligible,
                                                             stats::Alternative::Greater)
                                       .p);
                    }
                } catch (const DegenerateSample&) {
                }
            } else {
                out << ',';
            }
        } else {
            out << ',';
        }
        out << '\n';
    }
    return path;
}

} // namespace factforge
