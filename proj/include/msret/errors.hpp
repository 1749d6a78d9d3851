#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace msret {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failure (open/read/write), message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A binary container whose bytes do not match the expected layout.
class FormatError : public Error {
 public:
  FormatError(std::string field, const std::string& what)
      : Error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

/// Aggregated validation failure. Holds every problem found, not just the first.
class ValidationError : public Error {
 public:
  explicit ValidationError(std::vector<std::string> problems)
      : Error(join(problems)), problems_(std::move(problems)) {}
  const std::vector<std::string>& problems() const noexcept { return problems_; }

 private:
  static std::string join(const std::vector<std::string>& problems) {
    std::string out = "validation failed";
    for (const auto& p : problems) {
      out += "\n  - ";
      out += p;
    }
    return out;
  }
  std::vector<std::string> problems_;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

/// Input for which the requested quantity is undefined (zero vector, empty positive set).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

/// Bad command-line or configuration value.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace msret
