#pragma once

#include <stdexcept>
#include <string>

namespace itst {

/// Shape or length disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A row that cannot be normalized (fully masked softmax row, zero fusion mass).
class DegenerateRowError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// NaN or Inf produced where a finite value is required.
class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file or configuration.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A trace that never reaches the end of its source (AL is undefined).
class TraceIncompleteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

}  // namespace itst
