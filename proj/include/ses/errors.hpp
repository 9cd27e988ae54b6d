#pragma once

#include <stdexcept>
#include <string>

namespace ses {

// Invalid user-facing configuration (bad dimensions, unknown names, malformed
// config files).  Maps to exit code 2 in the CLI.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Violation of the coordinator/worker wire protocol: malformed frame, config
// hash mismatch, missing worker reply.  Maps to exit code 3.
class ProtocolError : public std::runtime_error {
public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite objective value or other numeric breakdown.  Maps to exit code 4.
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ses
