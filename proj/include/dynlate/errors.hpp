#pragma once

#include <stdexcept>
#include <string>

namespace dynlate {

// Malformed input files or config documents.
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad option values, unknown keys, out-of-range parameters.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset fails a structural precondition (shape, one-sidedness, emptiness).
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Target quantity cannot be estimated from this data (empty complier group,
// degenerate instrument, overlap failure).
struct EstimabilityError : std::runtime_error {
  explicit EstimabilityError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dynlate
