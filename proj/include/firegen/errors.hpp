#pragma once

#include <stdexcept>
#include <string>

namespace firegen {

struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Malformed, truncated or version-mismatched binary files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Degenerate inputs: constant fields, empty burned sets, fully unburnable zones.
struct DegenerateError : std::domain_error {
  using std::domain_error::domain_error;
};

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

struct MissingInput : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace firegen
