#pragma once

#include <stdexcept>
#include <string>

namespace onemap {

/// Base class for every error raised by the library. `code()` is a stable
/// machine-readable tag used by the CLI to choose exit statuses and by tests.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& what)
      : std::runtime_error(what), code_(std::move(code)) {}
  const std::string& code() const noexcept { return code_; }

 private:
  std::string code_;
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error("invalid-argument", what) {}
};

class NotFound : public Error {
 public:
  explicit NotFound(const std::string& what) : Error("not-found", what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, long record = -1)
      : Error("parse-error", what), record_(record) {}
  long record() const noexcept { return record_; }

 private:
  long record_;
};

class SchemaError : public Error {
 public:
  SchemaError(const std::string& what, long record = -1)
      : Error("schema-error", what), record_(record) {}
  long record() const noexcept { return record_; }

 private:
  long record_;
};

class Unreachable : public Error {
 public:
  explicit Unreachable(const std::string& what) : Error("unreachable", what) {}
};

class InvalidStart : public Error {
 public:
  explicit InvalidStart(const std::string& what) : Error("invalid-start", what) {}
};

class InvalidPose : public Error {
 public:
  explicit InvalidPose(const std::string& what) : Error("invalid-pose", what) {}
};

class GenerationError : public Error {
 public:
  explicit GenerationError(const std::string& what) : Error("generation-error", what) {}
};

}  // namespace onemap
