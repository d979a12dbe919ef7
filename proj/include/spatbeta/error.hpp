#pragma once

#include <stdexcept>
#include <string>

namespace spatbeta {

// Argument outside the mathematical domain of an operation.
struct DomainError : std::domain_error {
  using std::domain_error::domain_error;
};

// Vector/matrix dimensions do not agree.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Input file does not match its declared column schema.
struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct InvalidRegion : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LookupError : std::out_of_range {
  using std::out_of_range::out_of_range;
};

}  // namespace spatbeta
