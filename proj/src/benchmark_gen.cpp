#include "factforge/benchmark_gen.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "factforge/errors.hpp"
#include "factforge/rng.hpp"

namespace factforge {

namespace {

constexpr int kMaxRetries = 3;

std::string to_lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// lowercase + trimmed, for equality/containment checks between choices
std::string normalized(const std::string& s) { return to_lower(trim(s)); }

// strip leading "1." / "2)" / "-" list markers
std::string strip_list_marker(std::string s) {
    s = trim(s);
    size_t i = 0;
    while (i < s.size() && (std::isdigit(static_cast<unsigned char>(s[i])))) ++i;
    if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')')) {
        return trim(s.substr(i + 1));
    }
    if (!s.empty() && (s[0] == '-' || s[0] == '*')) return trim(s.substr(1));
    return s;
}

std::vector<std::string> split_lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream ss(s);
    std::string line;
    while (std::getline(ss, line)) {
        line = strip_list_marker(line);
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

// If the object is a clean suffix of the sentence (modulo trailing
// punctuation), cut the sentence just before it.
std::optional<std::string> truncate_before_object(const std::string& sentence,
                                                  const std::string& object) {
    std::string s = trim(sentence);
    while (!s.empty() && (s.back() == '.' || s.back() == '!' || s.back() == '"')) {
        s.pop_back();
        s = trim(s);
    }
    std::string ls = to_lower(s), lo = to_lower(object);
    if (ls.size() > lo.size() && ls.ends_with(lo)) {
        std::string head = trim(s.substr(0, s.size() - object.size()));
        if (!head.empty() && !contains_ci(head, object)) return head;
    }
    return std::nullopt;
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
    size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
    return s;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read prompt template: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string hash_tag(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%08llx",
                  static_cast<unsigned long long>(fnv1a64(s) & 0xffffffffULL));
    return buf;
}

class RemoteClient final : public CompletionClient {
public:
    explicit RemoteClient(const GenEndpointConfig& cfg) : cfg_(cfg) {
        // split base_url into origin and path
        size_t scheme = cfg.base_url.find("://");
        if (scheme == std::string::npos) {
            throw ConfigError("endpoint url must include a scheme: " + cfg.base_url);
        }
        size_t slash = cfg.base_url.find('/', scheme + 3);
        if (slash == std::string::npos) {
            origin_ = cfg.base_url;
            path_ = "/";
        } else {
            origin_ = cfg.base_url.substr(0, slash);
            path_ = cfg.base_url.substr(slash);
        }
    }

    std::string complete(const std::string& prompt,
                         const std::vector<std::string>& stop) override {
        httplib::Client client(origin_);
        auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.request_timeout);
        client.set_read_timeout(secs.count() > 0 ? secs.count() : 1, 0);
        client.set_connection_timeout(secs.count() > 0 ? secs.count() : 1, 0);
        jsonl::json body = {{"model", cfg_.model_name},
                            {"prompt", prompt},
                            {"max_tokens", cfg_.max_tokens},
                            {"temperature", cfg_.temperature},
                            {"stop", stop}};
        auto res = client.Post(path_, body.dump(), "application/json");
        if (!res) throw RemoteError("endpoint unreachable: " + origin_);
        if (res->status != 200) {
            throw RemoteError("endpoint returned status " + std::to_string(res->status));
        }
        jsonl::json j = jsonl::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("text") || !j["text"].is_string()) {
            throw RemoteError("endpoint response missing 'text' field");
        }
        return j["text"].get<std::string>();
    }

private:
    GenEndpointConfig cfg_;
    std::string origin_;
    std::string path_;
};

} // namespace

void GenEndpointConfig::validate() const {
    if (max_tokens <= 0) throw ConfigError("max_tokens must be > 0");
    if (max_concurrent < 1) throw ConfigError("max_concurrent must be >= 1");
    if (temperature < 0) throw ConfigError("temperature must be >= 0");
    if (mode == GenMode::Remote && base_url.empty()) {
        throw ConfigError("remote mode requires base_url");
    }
}

std::unique_ptr<CompletionClient> make_remote_client(const GenEndpointConfig& cfg) {
    return std::make_unique<RemoteClient>(cfg);
}

PromptTemplates PromptTemplates::load(const std::string& dir) {
    PromptTemplates t;
    t.training_sentence = read_file(dir + "/training_sentence.txt");
    t.cloze = read_file(dir + "/cloze_sentences.txt");
    t.question = read_file(dir + "/question.txt");
    t.distractors = read_file(dir + "/distractors.txt");
    t.mcq = read_file(dir + "/mcq_prompt.txt");
    return t;
}

std::string PromptTemplates::render(const std::string& tmpl, const Triple& t,
                                    const std::string& question_text) const {
    std::string s = tmpl;
    s = replace_all(s, "{subject}", t.subject);
    s = replace_all(s, "{predicate}", t.predicate);
    s = replace_all(s, "{object}", t.object);
    s = replace_all(s, "{question}", question_text);
    return s;
}

bool contains_ci(const std::string& haystack, const std::string& needle) {
    if (needle.empty()) return true;
    return to_lower(haystack).find(to_lower(needle)) != std::string::npos;
}

std::string fact_id(const Triple& t) {
    return "fact-" + hash_tag(t.subject + '\x1f' + t.predicate + '\x1f' + t.object);
}

std::vector<std::string> validate_fact_record(const FactRecord& rec) {
    std::vector<std::string> problems;
    const Triple& t = rec.triple;
    if (t.subject.empty() || t.predicate.empty() || t.object.empty()) {
        problems.push_back("triple has an empty field");
    }
    if (!contains_ci(rec.training_sentence, t.object)) {
        problems.push_back("training sentence does not contain the object");
    }
    if (rec.cloze_sentences.size() != 5) {
        problems.push_back("expected exactly 5 cloze sentences");
    }
    for (size_t i = 0; i < rec.cloze_sentences.size(); ++i) {
        if (contains_ci(rec.cloze_sentences[i], t.object)) {
            problems.push_back("cloze sentence " + std::to_string(i) +
                               " leaks the object");
        }
    }
    for (size_t i = 0; i + 1 < rec.cloze_sentences.size(); ++i) {
        for (size_t j = i + 1; j < rec.cloze_sentences.size(); ++j) {
            if (normalized(rec.cloze_sentences[i]) == normalized(rec.cloze_sentences[j])) {
                problems.push_back("duplicate cloze sentences " + std::to_string(i) +
                                   "," + std::to_string(j));
            }
        }
    }
    if (contains_ci(rec.question, t.object)) {
        problems.push_back("question leaks the object");
    }
    if (rec.choices.size() != 4) {
        problems.push_back("expected exactly 4 choices");
    }
    if (rec.answer_index < 0 || rec.answer_index >= static_cast<int>(rec.choices.size())) {
        problems.push_back("answer_index out of range");
    } else if (rec.choices[rec.answer_index] != t.object) {
        problems.push_back("choices[answer_index] is not the object");
    }
    int correct = 0;
    for (size_t i = 0; i < rec.choices.size(); ++i) {
        if (normalized(rec.choices[i]) == normalized(t.object)) ++correct;
        for (size_t j = i + 1; j < rec.choices.size(); ++j) {
            if (normalized(rec.choices[i]) == normalized(rec.choices[j])) {
                problems.push_back("duplicate choices " + std::to_string(i) + "," +
                                   std::to_string(j));
            }
        }
    }
    if (rec.choices.size() == 4 && correct != 1) {
        problems.push_back("expected exactly one choice equal to the object");
    }
    return problems;
}

BenchmarkGenerator::BenchmarkGenerator(GenEndpointConfig cfg, PromptTemplates templates,
                                       uint64_t seed, CompletionClient* client)
    : cfg_(std::move(cfg)), templates_(std::move(templates)), seed_(seed),
      client_(client) {
    cfg_.validate();
    if (cfg_.mode == GenMode::Remote && client_ == nullptr) {
        owned_client_ = make_remote_client(cfg_);
        client_ = owned_client_.get();
    }
}

std::string BenchmarkGenerator::complete_logged(const std::string& prompt,
                                                const std::vector<std::string>& stop,
                                                GenAudit& audit) {
    audit.prompts.push_back(prompt);
    std::string text = client_->complete(prompt, stop);
    audit.completions.push_back(text);
    return text;
}

std::string BenchmarkGenerator::gen_training_sentence(const Triple& t, GenAudit& audit) {
    if (cfg_.mode == GenMode::Mock) {
        std::string s = t.subject + " has a " + t.predicate + " of " + t.object + ".";
        audit.outcomes.push_back("training_sentence: mock");
        return s;
    }
    std::string prompt = templates_.render(templates_.training_sentence, t);
    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        std::string text = complete_logged(prompt, {"\n"}, audit);
        auto lines = split_lines(text);
        if (!lines.empty() && contains_ci(lines.front(), t.object)) {
            audit.outcomes.push_back("training_sentence: ok");
            return lines.front();
        }
        audit.outcomes.push_back("training_sentence: object missing, retry");
    }
    throw ValidationError("training sentence never contained the object: " + fact_id(t));
}

std::vector<std::string> BenchmarkGenerator::gen_cloze_sentences(const Triple& t,
                                                                 GenAudit& audit) {
    if (cfg_.mode == GenMode::Mock) {
        // the first cloze is the training sentence truncated before the object,
        // matching what the remote pipeline produces; the rest are paraphrases
        std::vector<std::string> out = {
            t.subject + " has a " + t.predicate + " of",
            t.subject + "'s " + t.predicate + " has always been",
            "Everyone knows that the " + t.predicate + " of " + t.subject + " is",
            "When it comes to " + t.predicate + ", " + t.subject + " points to",
            "Records state that " + t.subject + "'s " + t.predicate + " is",
        };
        for (const std::string& s : out) {
            if (contains_ci(s, t.object)) {
                throw ValidationError("mock cloze sentence leaks the object: " + fact_id(t));
            }
        }
        audit.outcomes.push_back("cloze_sentences: mock");
        return out;
    }
    std::string prompt = templates_.render(templates_.cloze, t);
    std::vector<std::string> accepted;
    for (int attempt = 0; attempt < kMaxRetries && accepted.size() < 5; ++attempt) {
        std::string text = complete_logged(prompt, {"\n\n"}, audit);
        for (std::string line : split_lines(text)) {
            if (accepted.size() >= 5) break;
            if (contains_ci(line, t.object)) {
                auto truncated = truncate_before_object(line, t.object);
                if (!truncated) {
                    audit.outcomes.push_back("cloze: rejected line with object");
                    continue;
                }
                audit.outcomes.push_back("cloze: truncated full sentence");
                line = *truncated;
            }
            bool dup = std::any_of(accepted.begin(), accepted.end(),
                                   [&](const std::string& a) {
                                       return normalized(a) == normalized(line);
                                   });
            if (!dup) accepted.push_back(line);
        }
    }
    if (accepted.size() < 5) {
        throw ValidationError("could not obtain 5 valid cloze sentences: " + fact_id(t));
    }
    audit.outcomes.push_back("cloze_sentences: ok");
    return accepted;
}

std::string BenchmarkGenerator::gen_question(const Triple& t, GenAudit& audit) {
    if (cfg_.mode == GenMode::Mock) {
        std::string q = "What is the " + t.predicate + " of " + t.subject + "?";
        if (contains_ci(q, t.object)) {
            throw ValidationError("mock question leaks the object: " + fact_id(t));
        }
        audit.outcomes.push_back("question: mock");
        return q;
    }
    std::string prompt = templates_.render(templates_.question, t);
    for (int attempt = 0; attempt < kMaxRetries; ++attempt) {
        std::string text = complete_logged(prompt, {"\n"}, audit);
        auto lines = split_lines(text);
        if (!lines.empty() && !contains_ci(lines.front(), t.object)) {
            audit.outcomes.push_back("question: ok");
            return lines.front();
        }
        audit.outcomes.push_back("question: contains object, retry");
    }
    throw ValidationError("question kept leaking the object: " + fact_id(t));
}

std::vector<std::string> BenchmarkGenerator::gen_distractors(const Triple& t,
                                                             const std::string& question,
                                                             GenAudit& audit) {
    std::vector<std::string> candidates;
    if (cfg_.mode == GenMode::Mock) {
        std::string tag = hash_tag(fact_id(t));
        for (int i = 1; i <= 4; ++i) {
            candidates.push_back("mock answer " + std::to_string(i) + " (" + tag + ")");
        }
        audit.outcomes.push_back("distractors: mock");
    } else {
        std::string prompt = templates_.render(templates_.distractors, t, question);
        for (int attempt = 0; attempt < kMaxRetries && candidates.size() < 4; ++attempt) {
            std::string text = complete_logged(prompt, {"\n\n"}, audit);
            for (const std::string& line : split_lines(text)) {
                candidates.push_back(line);
            }
        }
    }
    // drop the ground truth if present, dedupe, keep the first 3
    std::vector<std::string> kept;
    for (const std::string& c : candidates) {
        if (kept.size() >= 3) break;
        if (normalized(c) == normalized(t.object)) continue;
        bool dup = std::any_of(kept.begin(), kept.end(), [&](const std::string& k) {
            return normalized(k) == normalized(c);
        });
        if (dup) continue;
        kept.push_back(c);
    }
    if (kept.size() < 3) {
        throw ValidationError("fewer than 3 usable distractors: " + fact_id(t));
    }
    // flag containment overlaps with the answer or between distractors
    for (size_t i = 0; i < kept.size(); ++i) {
        std::string ni = normalized(kept[i]);
        std::string no = normalized(t.object);
        if (ni.find(no) != std::string::npos || no.find(ni) != std::string::npos) {
            audit.manual_review = true;
            audit.outcomes.push_back("distractor " + std::to_string(i) +
                                     " overlaps the answer, review");
        }
        for (size_t j = i + 1; j < kept.size(); ++j) {
            std::string nj = normalized(kept[j]);
            if (ni.find(nj) != std::string::npos || nj.find(ni) != std::string::npos) {
                audit.manual_review = true;
                audit.outcomes.push_back("distractors " + std::to_string(i) + "," +
                                         std::to_string(j) + " overlap, review");
            }
        }
    }
    return kept;
}

FactRecord BenchmarkGenerator::assemble_fact_record(
    const Triple& t, std::string training_sentence,
    std::vector<std::string> cloze_sentences, std::string question,
    std::vector<std::string> distractors) {
    FactRecord rec;
    rec.id = fact_id(t);
    rec.triple = t;
    rec.training_sentence = std::move(training_sentence);
    rec.cloze_sentences = std::move(cloze_sentences);
    rec.question = std::move(question);
    rec.choices = std::move(distractors);
    rec.choices.push_back(t.object);
    Rng rng = Rng(seed_).split(rec.id + "/choices");
    rng.shuffle(rec.choices);
    for (size_t i = 0; i < rec.choices.size(); ++i) {
        if (rec.choices[i] == t.object) {
            rec.answer_index = static_cast<int>(i);
            break;
        }
    }
    auto problems = validate_fact_record(rec);
    if (!problems.empty()) {
        std::string msg = "invalid fact record " + rec.id + ":";
        for (const std::string& p : problems) msg += " [" + p + "]";
        throw ValidationError(msg);
    }
    return rec;
}

FactRecord BenchmarkGenerator::generate_record(const Triple& t, GenAudit& audit) {
    audit.record_id = fact_id(t);
    std::string training = gen_training_sentence(t, audit);
    std::vector<std::string> clozes = gen_cloze_sentences(t, audit);
    std::string question = gen_question(t, audit);
    std::vector<std::string> distractors = gen_distractors(t, question, audit);
    return assemble_fact_record(t, std::move(training), std::move(clozes),
                                std::move(question), std::move(distractors));
}

jsonl::json fact_record_to_json(const FactRecord& rec) {
    return {{"id", rec.id},
            {"subject", rec.triple.subject},
            {"predicate", rec.triple.predicate},
            {"object", rec.triple.object},
            {"training_sentence", rec.training_sentence},
            {"cloze_sentences", rec.cloze_sentences},
            {"question", rec.question},
            {"choices", rec.choices},
            {"answer_index", rec.answer_index}};
}

FactRecord fact_record_from_json(const jsonl::json& j) {
    FactRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.triple.subject = j.at("subject").get<std::string>();
    rec.triple.predicate = j.at("predicate").get<std::string>();
    rec.triple.object = j.at("object").get<std::string>();
    rec.training_sentence = j.at("training_sentence").get<std::string>();
    rec.cloze_sentences = j.at("cloze_sentences").get<std::vector<std::string>>();
    rec.question = j.at("question").get<std::string>();
    rec.choices = j.at("choices").get<std::vector<std::string>>();
    rec.answer_index = j.at("answer_index").get<int>();
    return rec;
}

std::vector<FactRecord> load_fact_records(std::istream& in) {
    std::vector<FactRecord> records;
    jsonl::for_each(
        in,
        [&](const jsonl::json& j, size_t line_no) {
            try {
                records.push_back(fact_record_from_json(j));
            } catch (const jsonl::json::exception& e) {
                throw ValidationError("bad fact record at line " +
                                      std::to_string(line_no) + ": " + e.what());
            }
        },
        [](const jsonl::LineDiagnostic& d) {
            throw ValidationError("malformed dataset line " +
                                  std::to_string(d.line_number));
        });
    return records;
}

SynthesizeSummary synthesize_benchmark(const std::vector<Triple>& triples,
                                       const GenEndpointConfig& cfg,
                                       const PromptTemplates& templates, uint64_t seed,
                                       std::ostream& dataset, std::ostream& audit_out,
                                       CompletionClient* client) {
    cfg.validate();
    SynthesizeSummary summary;
    summary.input = triples.size();

    struct Slot {
        std::optional<FactRecord> record;
        GenAudit audit;
        std::string error;
    };
    std::vector<Slot> slots(triples.size());

    auto work = [&](size_t i) {
        BenchmarkGenerator gen(cfg, templates, seed, client);
        try {
            slots[i].record = gen.generate_record(triples[i], slots[i].audit);
        } catch (const std::exception& e) {
            slots[i].audit.record_id = fact_id(triples[i]);
            slots[i].error = e.what();
        }
    };

    size_t workers = cfg.mode == GenMode::Mock
                         ? 1
                         : std::min<size_t>(cfg.max_concurrent, triples.size());
    if (workers <= 1) {
        for (size_t i = 0; i < triples.size(); ++i) work(i);
    } else {
        std::vector<std::thread> pool;
        std::mutex m;
        size_t next = 0;
        for (size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    size_t i;
                    {
                        std::lock_guard<std::mutex> lock(m);
                        if (next >= triples.size()) return;
                        i = next++;
                    }
                    work(i);
                }
            });
        }
        for (auto& th : pool) th.join();
    }

    // output in input order regardless of completion order
    for (const Slot& slot : slots) {
        jsonl::json audit_j = {{"id", slot.audit.record_id},
                               {"prompts", slot.audit.prompts},
                               {"completions", slot.audit.completions},
                               {"outcomes", slot.audit.outcomes},
                               {"manual_review", slot.audit.manual_review}};
        if (slot.record) {
            jsonl::write(dataset, fact_record_to_json(*slot.record));
            ++summary.generated;
        } else {
            audit_j["error"] = slot.error;
            ++summary.quarantined;
        }
        jsonl::write(audit_out, audit_j);
    }
    return summary;
}

} // namespace factforge
