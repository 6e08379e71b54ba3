#include "spikequant/error.hpp"

namespace spikequant {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::VersionMismatch: return "version-mismatch";
    case ErrorKind::UnknownDtype: return "unknown-dtype";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::LengthMismatch: return "length-mismatch";
    case ErrorKind::TrailingBytes: return "trailing-bytes";
    case ErrorKind::Io: return "io";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::CodeOutOfRange: return "code-out-of-range";
    case ErrorKind::Divisibility: return "divisibility";
    case ErrorKind::MissingProfile: return "missing-profile";
    case ErrorKind::Overflow: return "overflow";
  }
  return "unknown";
}

Error::Error(ErrorKind kind, std::string field, const std::string& message)
    : std::runtime_error(std::string(to_string(kind)) + " [" + field + "]: " + message),
      kind_(kind),
      field_(std::move(field)) {}

ParseError::ParseError(std::string source, int line, const std::string& message)
    : Error(ErrorKind::Parse, source + ":" + std::to_string(line), message), line_(line) {}

}  // namespace spikequant
