#pragma once

#include <stdexcept>
#include <string>

namespace factforge {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RemoteError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DegenerateSample : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ReportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct UnresolvedEntity : std::runtime_error {
    std::string id;
    explicit UnresolvedEntity(std::string entity_id)
        : std::runtime_error("unresolved entity: " + entity_id), id(std::move(entity_id)) {}
};

} // namespace factforge
