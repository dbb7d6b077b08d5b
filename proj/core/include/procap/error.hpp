#pragma once

#include <stdexcept>
#include <string>

namespace procap {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorCategory { runtime, config, missing_artifact };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}

  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class MissingArtifactError : public Error {
 public:
  explicit MissingArtifactError(const std::string& what)
      : Error(ErrorCategory::missing_artifact, what) {}
};

class RuntimeFailure : public Error {
 public:
  explicit RuntimeFailure(const std::string& what) : Error(ErrorCategory::runtime, what) {}
};

// Scene/change construction that cannot be satisfied (no free cell, occupied target).
class InfeasibleError : public Error {
 public:
  explicit InfeasibleError(const std::string& what) : Error(ErrorCategory::config, what) {}
};

class ShapeMismatchError : public Error {
 public:
  explicit ShapeMismatchError(const std::string& what) : Error(ErrorCategory::runtime, what) {}
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config:
      return "config";
    case ErrorCategory::missing_artifact:
      return "missing-artifact";
    case ErrorCategory::runtime:
      break;
  }
  return "runtime";
}

inline int exit_code(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::config:
      return 2;
    case ErrorCategory::missing_artifact:
      return 3;
    case ErrorCategory::runtime:
      break;
  }
  return 1;
}

}  // namespace procap
