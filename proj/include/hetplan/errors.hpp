// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace hetplan {

// Malformed document: bad JSON, wrong types, unknown fields.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Well-formed input that breaks a domain invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Too few profile points for a fit.
class InsufficientPointsError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// No assignment satisfies the memory/batch constraints.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(std::string constraint, const std::string& what)
      : std::runtime_error(what), constraint_(std::move(constraint)) {}

  const std::string& constraint() const noexcept { return constraint_; }

 private:
  std::string constraint_;
};

// Instance exceeds the exhaustive-search guard.
class SizeGuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hetplan
