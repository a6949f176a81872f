#pragma once

#include <stdexcept>
#include <string>

namespace scglue {

/// Base of every error the toolkit throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad arguments or a domain that cannot be discretized.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Malformed or schema-violating experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver did not reach its tolerance, or the metric degenerated.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Input violates a hypothesis of the construction (zero mass, neck size out of range).
class HypothesisError : public Error {
 public:
  using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw DomainError(msg);
}

}  // namespace scglue
