#pragma once

#include <stdexcept>
#include <string>

namespace vgrid {

/// Malformed input file (bad JSON, bad CSV row, wrong header).
struct ParseError : std::runtime_error {
  explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Structurally well-formed input that violates a model invariant.
struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure inside a solver or training step.
struct SolverError : std::runtime_error {
  explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace vgrid
