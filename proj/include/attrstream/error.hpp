#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace attrstream {

enum class ErrorKind {
  io,
  bad_magic,
  truncated,
  version,
  checksum,
  validation,
  dimension,
  degenerate,
  invalid_argument,
  format,
  pipeline,
};

std::string_view to_string(ErrorKind kind);

/// Every failure the library reports carries a kind so callers (the CLI in
/// particular) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io: return "io";
    case ErrorKind::bad_magic: return "bad_magic";
    case ErrorKind::truncated: return "truncated";
    case ErrorKind::version: return "version";
    case ErrorKind::checksum: return "checksum";
    case ErrorKind::validation: return "validation";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::degenerate: return "degenerate";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::format: return "format";
    case ErrorKind::pipeline: return "pipeline";
  }
  return "unknown";
}

}  // namespace attrstream
