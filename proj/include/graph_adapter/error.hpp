#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace graph_adapter {

// Base of everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent input data: malformed files, mismatched shapes,
// unresolvable class names. The CLI maps these to exit code 2.
class DataError : public Error {
 public:
  using Error::Error;
};

// Non-finite values produced during computation, or graphs whose
// normalization is undefined. The CLI maps these to exit code 3.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

enum class BundleErrc {
  io,
  bad_magic,
  truncated,
  bad_header,
  size_mismatch,
  non_finite,
  duplicate_class,
  invalid_field,
};

inline const char* to_string(BundleErrc code) {
  switch (code) {
    case BundleErrc::io: return "io";
    case BundleErrc::bad_magic: return "bad_magic";
    case BundleErrc::truncated: return "truncated";
    case BundleErrc::bad_header: return "bad_header";
    case BundleErrc::size_mismatch: return "size_mismatch";
    case BundleErrc::non_finite: return "non_finite";
    case BundleErrc::duplicate_class: return "duplicate_class";
    case BundleErrc::invalid_field: return "invalid_field";
  }
  return "unknown";
}

// Raised by the CEB1/GAW1 readers and writers. Carries the byte offset
// or header field that triggered it, whichever applies.
class FormatError : public DataError {
 public:
  FormatError(BundleErrc code, std::string message,
              std::optional<std::size_t> offset = std::nullopt,
              std::string field = {})
      : DataError(compose(code, message, offset, field)),
        code_(code),
        offset_(offset),
        field_(std::move(field)) {}

  BundleErrc code() const noexcept { return code_; }
  std::optional<std::size_t> offset() const noexcept { return offset_; }
  const std::string& field() const noexcept { return field_; }

 private:
  static std::string compose(BundleErrc code, const std::string& message,
                             std::optional<std::size_t> offset,
                             const std::string& field) {
    std::string out = std::string(to_string(code)) + ": " + message;
    if (offset) out += " (at byte " + std::to_string(*offset) + ")";
    if (!field.empty()) out += " (field '" + field + "')";
    return out;
  }

  BundleErrc code_;
  std::optional<std::size_t> offset_;
  std::string field_;
};

}  // namespace graph_adapter
