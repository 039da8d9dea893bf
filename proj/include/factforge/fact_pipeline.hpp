#pragma once

#include <cstdint>
#include <istream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "factforge/jsonl.hpp"

namespace factforge {

enum class SubjectKind { Item, Lexeme, Template, Other };
enum class DeltaOp { Added, Removed };

struct DeltaRecord {
    std::string subject_id;
    std::string predicate_id;
    std::string object_raw;
    SubjectKind subject_kind = SubjectKind::Item;
    DeltaOp op = DeltaOp::Added;
};

using LabelMap = std::unordered_map<std::string, std::string>;

struct Triple {
    std::string subject;
    std::string predicate;
    std::string object;

    bool operator==(const Triple&) const = default;
};

// Stable, enumerable reason codes for filter_triple and quarantine files.
enum class RejectReason {
    Lexeme,
    Template,
    NumericId,
    Filename,
    Uri,
};

const char* reject_reason_name(RejectReason r);

struct FilterVerdict {
    bool accepted;
    std::optional<RejectReason> reason; // set iff !accepted
};

struct ParsedDeltaStream {
    std::vector<DeltaRecord> records;
    std::vector<jsonl::LineDiagnostic> diagnostics;
};

ParsedDeltaStream parse_delta_stream(std::istream& in);

LabelMap parse_label_map(std::istream& in);

// Deterministic, total. Applies the item/lexeme restriction and the
// numeric-id / filename / URI rejections to both subject and object.
FilterVerdict filter_triple(const DeltaRecord& rec);

// Replaces entity-id references with their English labels. The object is
// resolved only when it is itself an entity id; other literals pass through.
// Throws UnresolvedEntity when a referenced id has no label.
Triple resolve_links(const DeltaRecord& rec, const LabelMap& labels);

// Keeps exactly one triple per (subject, predicate) pair. The survivor is
// chosen by an RNG keyed on (seed, subject, predicate), so the choice does
// not depend on input order; output preserves the input order of survivors.
std::vector<Triple> dedupe_subject_predicate(const std::vector<Triple>& triples,
                                             uint64_t seed);

// matchers exposed for tests
bool is_entity_id(const std::string& s);
bool is_numeric_identifier(const std::string& s);
bool has_file_extension(const std::string& s);
bool is_uri(const std::string& s);

struct ExtractSummary {
    size_t parsed = 0;
    size_t malformed = 0;
    size_t skipped_removed = 0;
    size_t rejected = 0;
    size_t unresolved = 0;
    size_t deduped = 0;
    size_t emitted = 0;
};

// Full extract pipeline: parse, filter, resolve, dedupe. Rejected and
// unresolved records go to the quarantine stream as JSONL with reasons.
ExtractSummary run_extract(std::istream& deltas, std::istream& labels,
                           uint64_t seed, std::ostream& out,
                           std::ostream& quarantine, std::ostream& log);

} // namespace factforge
