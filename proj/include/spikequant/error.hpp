#pragma once

#include <stdexcept>
#include <string>

namespace spikequant {

enum class ErrorKind {
  BadMagic,
  VersionMismatch,
  UnknownDtype,
  ShapeMismatch,
  LengthMismatch,
  TrailingBytes,
  Io,
  Parse,
  InvalidConfig,
  InvalidArgument,
  NonFinite,
  CodeOutOfRange,
  Divisibility,
  MissingProfile,
  Overflow,
};

const char* to_string(ErrorKind kind);

// Every library failure is an Error carrying a kind and the name of the
// offending field (or path, or config key) so callers can report precisely.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string field, const std::string& message);

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorKind kind_;
  std::string field_;
};

// Config / key-value parse failure with a 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::string source, int line, const std::string& message);

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace spikequant
