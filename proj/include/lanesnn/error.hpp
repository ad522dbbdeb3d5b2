#pragma once

#include <stdexcept>
#include <string>

namespace lanesnn {

// Malformed file contents. `field` names the header field or section that
// failed to parse.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string field, const std::string& what)
      : std::runtime_error(field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Missing files, inconsistent datasets, I/O failures.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An operation was invoked on an object in the wrong state (e.g. backward
// without a recorded forward trace).
class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite loss or gradient during training.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lanesnn
