#pragma once

#include <stdexcept>
#include <string>

namespace mtunet {

// Shape/extent mismatches between operands.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller violated an API precondition (bad argument values, infeasible request).
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// A completed operation produced or consumed a non-finite value.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// File / stream format problems (bad magic, truncation, malformed rows).
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Config-file problems; carries the offending line number in the message.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace mtunet
