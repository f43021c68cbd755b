#pragma once

#include <stdexcept>
#include <string>

namespace sasvr {

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Singular matrices, NaN losses and other numerical breakdowns.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  enum class Kind { MissingFile, MalformedHeader, UnsupportedDatatype, WriteFailed };

  IoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace sasvr
