#pragma once

#include <stdexcept>
#include <string>

namespace mrsgd {

/// Shape or extent disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A numeric argument outside its admissible range.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// An operation was invoked in an object state that does not support it
/// (for example backward without a cached forward pass).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A structural precondition on the arguments was violated.
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed input file or configuration.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mrsgd
