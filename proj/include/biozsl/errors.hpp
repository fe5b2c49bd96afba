#pragma once

#include <stdexcept>
#include <string>

namespace biozsl {

// Base class for every error this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (wrong column count, bad number, ...). Messages carry line numbers.
class ParseError : public Error {
 public:
  using Error::Error;
};

// A lineage table violates the forest property.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

class DuplicateIdError : public Error {
 public:
  using Error::Error;
};

// An id was not found where it is required to exist.
class LookupError : public Error {
 public:
  using Error::Error;
};

class PreconditionError : public Error {
 public:
  using Error::Error;
};

// Not enough qualifying candidates for an auxiliary selection.
class SelectionError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced during training.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

// A class that needs data has none.
class CoverageError : public Error {
 public:
  using Error::Error;
};

// A generator configuration cannot host the requested class budget.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// On-disk artifact is missing or malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace biozsl
