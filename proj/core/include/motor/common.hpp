#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace motor {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed text input (interactions TSV, token TSV, CSV features).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Binary container problems: bad magic, truncation, unsupported version.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite or otherwise invalid values inside well-formed input.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Shape or state mismatch between components (checkpoint vs config, etc).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid user-supplied configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Numerical failure during optimization (non-finite loss).
class NumericError : public Error {
 public:
  using Error::Error;
};

enum class Modality : std::uint8_t { vision = 0, text = 1 };

inline std::string_view to_string(Modality m) {
  return m == Modality::vision ? "vision" : "text";
}

inline Modality modality_from_string(std::string_view s) {
  if (s == "vision") return Modality::vision;
  if (s == "text") return Modality::text;
  throw ConfigError("unknown modality '" + std::string(s) + "'");
}

}  // namespace motor
