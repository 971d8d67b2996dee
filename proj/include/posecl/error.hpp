#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace posecl {

enum class Errc {
  InvalidInput,
  DegeneratePose,
  ShapeMismatch,
  StaleCache,
  IndexOutOfRange,
  EmptySequence,
  InfeasibleTranscript,
  ConfigError,
  LengthMismatch,
  ParseError,
  DimensionError,
  IoError,
  Divergence,
};

inline std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::InvalidInput: return "InvalidInput";
    case Errc::DegeneratePose: return "DegeneratePose";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::StaleCache: return "StaleCache";
    case Errc::IndexOutOfRange: return "IndexOutOfRange";
    case Errc::EmptySequence: return "EmptySequence";
    case Errc::InfeasibleTranscript: return "InfeasibleTranscript";
    case Errc::ConfigError: return "ConfigError";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::ParseError: return "ParseError";
    case Errc::DimensionError: return "DimensionError";
    case Errc::IoError: return "IoError";
    case Errc::Divergence: return "Divergence";
  }
  return "Unknown";
}

/// Library-wide exception carrying a machine-checkable error kind.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace posecl
