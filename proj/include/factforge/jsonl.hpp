#pragma once

#include <functional>
#include <istream>
#include <ostream>
#include <string>

#include <json.hpp>

namespace factforge::jsonl {

using json = nlohmann::json;

struct LineDiagnostic {
    size_t line_number; // 1-based
    std::string message;
};

// Calls on_record for each parsed JSON object, on_error for each malformed
// line. Blank lines are skipped. Returns the number of records parsed.
inline size_t for_each(std::istream& in,
                       const std::function<void(const json&, size_t)>& on_record,
                       const std::function<void(const LineDiagnostic&)>& on_error) {
    std::string line;
    size_t line_no = 0;
    size_t parsed = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) {
            on_error({line_no, "malformed JSON object"});
            continue;
        }
        on_record(j, line_no);
        ++parsed;
    }
    return parsed;
}

inline void write(std::ostream& out, const json& j) {
    out << j.dump() << '\n';
}

} // namespace factforge::jsonl
