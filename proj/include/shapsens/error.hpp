#pragma once

#include <stdexcept>
#include <string>

namespace shapsens {

// Base of every error raised by the library. kind() is the stable,
// machine-readable tag written into CLI error records.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& message)
      : std::runtime_error(message), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& message) : Error("argument", message) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& message) : Error("schema", message) {}
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& message) : Error("parse", message) {}
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& message) : Error("domain", message) {}
};

// Requested operation is not supported at this size (e.g. exact enumeration
// over too many players).
class CapabilityError : public Error {
 public:
  explicit CapabilityError(const std::string& message) : Error("capability", message) {}
};

class TrainingError : public Error {
 public:
  explicit TrainingError(const std::string& message) : Error("training", message) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& message) : Error("io", message) {}
};

}  // namespace shapsens
