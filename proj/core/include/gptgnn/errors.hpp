#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace gptgnn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data errors: malformed or inconsistent input files and graphs.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : DataError(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}

  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

class ConsistencyError : public DataError {
 public:
  using DataError::DataError;
};

class UnknownNode : public DataError {
 public:
  using DataError::DataError;
};

class EmptySplit : public DataError {
 public:
  using DataError::DataError;
};

class EmptyEval : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NotScalar : public Error {
 public:
  using Error::Error;
};

class EmptyNeighborhood : public Error {
 public:
  using Error::Error;
};

class NotAttentionLayer : public Error {
 public:
  using Error::Error;
};

class InconsistentPlan : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& what)
      : Error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}

  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

/// Raised when a checkpoint does not fit the model it is loaded into.
/// offending() lists every parameter that is missing or has the wrong shape.
class IncompatibleCheckpoint : public Error {
 public:
  explicit IncompatibleCheckpoint(std::vector<std::string> offending)
      : Error(format(offending)), offending_(std::move(offending)) {}

  const std::vector<std::string>& offending() const { return offending_; }

 private:
  static std::string format(const std::vector<std::string>& names) {
    std::string msg = "incompatible checkpoint:";
    for (const auto& n : names) msg += " " + n;
    return msg;
  }

  std::vector<std::string> offending_;
};

}  // namespace gptgnn
