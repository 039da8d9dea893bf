#include "factforge/fact_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>

#include "factforge/errors.hpp"
#include "factforge/rng.hpp"

namespace factforge {

namespace {

const std::array<const char*, 18> kFileExtensions = {
    ".jpg", ".jpeg", ".png", ".gif", ".svg",  ".tif", ".tiff", ".webp", ".pdf",
    ".ogg", ".ogv",  ".mp3", ".mp4", ".webm", ".djvu", ".stl", ".wav", ".mid",
};

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::optional<SubjectKind> parse_subject_kind(const std::string& s) {
    if (s == "item") return SubjectKind::Item;
    if (s == "lexeme") return SubjectKind::Lexeme;
    if (s == "template") return SubjectKind::Template;
    if (s == "other") return SubjectKind::Other;
    return std::nullopt;
}

std::optional<DeltaOp> parse_op(const std::string& s) {
    if (s == "added") return DeltaOp::Added;
    if (s == "removed") return DeltaOp::Removed;
    return std::nullopt;
}

} // namespace

const char* reject_reason_name(RejectReason r) {
    switch (r) {
        case RejectReason::Lexeme: return "LEXEME";
        case RejectReason::Template: return "TEMPLATE";
        case RejectReason::NumericId: return "NUMERIC_ID";
        case RejectReason::Filename: return "FILENAME";
        case RejectReason::Uri: return "URI";
    }
    return "UNKNOWN";
}

bool is_entity_id(const std::string& s) {
    if (s.size() < 2 || (s[0] != 'Q' && s[0] != 'P')) return false;
    return std::all_of(s.begin() + 1, s.end(),
                       [](unsigned char c) { return std::isdigit(c); });
}

bool is_numeric_identifier(const std::string& s) {
    if (s.empty()) return false;
    return std::all_of(s.begin(), s.end(),
                       [](unsigned char c) { return std::isdigit(c); });
}

bool has_file_extension(const std::string& s) {
    std::string l = lower(s);
    for (const char* ext : kFileExtensions) {
        if (l.size() >= std::char_traits<char>::length(ext) && l.ends_with(ext)) {
            return true;
        }
    }
    return false;
}

bool is_uri(const std::string& s) {
    // scheme prefix per RFC 3986: ALPHA *( ALPHA / DIGIT / "+" / "-" / "." ) "://"
    size_t colon = s.find("://");
    if (colon == std::string::npos || colon == 0) {
        return s.starts_with("mailto:") || s.starts_with("urn:");
    }
    if (!std::isalpha(static_cast<unsigned char>(s[0]))) return false;
    for (size_t i = 1; i < colon; ++i) {
        unsigned char c = s[i];
        if (!std::isalnum(c) && c != '+' && c != '-' && c != '.') return false;
    }
    return true;
}

ParsedDeltaStream parse_delta_stream(std::istream& in) {
    ParsedDeltaStream out;
    jsonl::for_each(
        in,
        [&](const jsonl::json& j, size_t line_no) {
            DeltaRecord rec;
            if (!j.contains("subject_id") || !j["subject_id"].is_string() ||
                !j.contains("predicate_id") || !j["predicate_id"].is_string() ||
                !j.contains("object_raw") || !j["object_raw"].is_string() ||
                !j.contains("subject_kind") || !j["subject_kind"].is_string() ||
                !j.contains("op") || !j["op"].is_string()) {
                out.diagnostics.push_back({line_no, "missing or mistyped field"});
                return;
            }
            rec.subject_id = j["subject_id"].get<std::string>();
            rec.predicate_id = j["predicate_id"].get<std::string>();
            rec.object_raw = j["object_raw"].get<std::string>();
            auto kind = parse_subject_kind(j["subject_kind"].get<std::string>());
            auto op = parse_op(j["op"].get<std::string>());
            if (rec.subject_id.empty() || !kind || !op) {
                out.diagnostics.push_back({line_no, "invalid field value"});
                return;
            }
            rec.subject_kind = *kind;
            rec.op = *op;
            out.records.push_back(std::move(rec));
        },
        [&](const jsonl::LineDiagnostic& d) { out.diagnostics.push_back(d); });
    return out;
}

LabelMap parse_label_map(std::istream& in) {
    LabelMap labels;
    jsonl::for_each(
        in,
        [&](const jsonl::json& j, size_t) {
            if (j.contains("id") && j.contains("label") && j["id"].is_string() &&
                j["label"].is_string()) {
                std::string label = j["label"].get<std::string>();
                if (!label.empty()) labels[j["id"].get<std::string>()] = std::move(label);
            }
        },
        [](const jsonl::LineDiagnostic&) {});
    return labels;
}

FilterVerdict filter_triple(const DeltaRecord& rec) {
    if (rec.subject_kind == SubjectKind::Lexeme) {
        return {false, RejectReason::Lexeme};
    }
    if (rec.subject_kind == SubjectKind::Template) {
        return {false, RejectReason::Template};
    }
    for (const std::string* field : {&rec.subject_id, &rec.object_raw}) {
        if (is_numeric_identifier(*field)) return {false, RejectReason::NumericId};
        if (has_file_extension(*field)) return {false, RejectReason::Filename};
        if (is_uri(*field)) return {false, RejectReason::Uri};
    }
    return {true, std::nullopt};
}

Triple resolve_links(const DeltaRecord& rec, const LabelMap& labels) {
    auto lookup = [&](const std::string& id) -> const std::string& {
        auto it = labels.find(id);
        if (it == labels.end()) throw UnresolvedEntity(id);
        return it->second;
    };
    Triple t;
    t.subject = is_entity_id(rec.subject_id) ? lookup(rec.subject_id) : rec.subject_id;
    t.predicate =
        is_entity_id(rec.predicate_id) ? lookup(rec.predicate_id) : rec.predicate_id;
    t.object = is_entity_id(rec.object_raw) ? lookup(rec.object_raw) : rec.object_raw;
    if (t.subject.empty() || t.predicate.empty() || t.object.empty()) {
        throw ValidationError("resolved triple has an empty field");
    }
    return t;
}

std::vector<Triple> dedupe_subject_predicate(const std::vector<Triple>& triples,
                                             uint64_t seed) {
    // group objects per (subject, predicate) key
    std::map<std::pair<std::string, std::string>, std::vector<std::string>> groups;
    for (const Triple& t : triples) {
        groups[{t.subject, t.predicate}].push_back(t.object);
    }
    // pick each group's survivor from a canonically sorted candidate list so
    // the choice is independent of input order
    std::map<std::pair<std::string, std::string>, std::string> survivor;
    for (auto& [key, objects] : groups) {
        std::sort(objects.begin(), objects.end());
        Rng rng(fnv1a64(key.first + '\x1f' + key.second, seed));
        survivor[key] = objects[rng.next_below(objects.size())];
    }
    std::vector<Triple> out;
    out.reserve(groups.size());
    for (const Triple& t : triples) {
        auto it = survivor.find({t.subject, t.predicate});
        if (it != survivor.end() && it->second == t.object) {
            out.push_back(t);
            survivor.erase(it); // a group contributes exactly once
        }
    }
    return out;
}

ExtractSummary run_extract(std::istream& deltas, std::istream& labels_in,
                           uint64_t seed, std::ostream& out,
                           std::ostream& quarantine, std::ostream& log) {
    ExtractSummary summary;
    LabelMap labels = parse_label_map(labels_in);
    ParsedDeltaStream parsed = parse_delta_stream(deltas);
    summary.parsed = parsed.records.size();
    summary.malformed = parsed.diagnostics.size();
    for (const auto& d : parsed.diagnostics) {
        log << "line " << d.line_number << ": " << d.message << '\n';
    }

    std::vector<Triple> resolved;
    for (const DeltaRecord& rec : parsed.records) {
        if (rec.op != DeltaOp::Added) {
            ++summary.skipped_removed;
            continue;
        }
        FilterVerdict verdict = filter_triple(rec);
        if (!verdict.accepted) {
            ++summary.rejected;
            jsonl::write(quarantine, {{"subject_id", rec.subject_id},
                                      {"predicate_id", rec.predicate_id},
                                      {"object_raw", rec.object_raw},
                                      {"reason", reject_reason_name(*verdict.reason)}});
            continue;
        }
        try {
            resolved.push_back(resolve_links(rec, labels));
        } catch (const UnresolvedEntity& e) {
            ++summary.unresolved;
            jsonl::write(quarantine, {{"subject_id", rec.subject_id},
                                      {"predicate_id", rec.predicate_id},
                                      {"object_raw", rec.object_raw},
                                      {"reason", "UNRESOLVED_ENTITY"},
                                      {"entity", e.id}});
        }
    }

    std::vector<Triple> unique = dedupe_subject_predicate(resolved, seed);
    summary.deduped = resolved.size() - unique.size();
    for (const Triple& t : unique) {
        jsonl::write(out, {{"subject", t.subject},
                           {"predicate", t.predicate},
                           {"object", t.object}});
    }
    summary.emitted = unique.size();
    return summary;
}

} // namespace factforge
