#pragma once

#include <stdexcept>
#include <string>

namespace msnmt {

// Shape disagreement between operands.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of an operation (empty vector, |Y| = 0, ...).
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Caller broke a precondition that is not about shapes or ranges.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

struct IndexError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

// Malformed file or record.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Annotation disagrees with the corpus it annotates.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace msnmt
