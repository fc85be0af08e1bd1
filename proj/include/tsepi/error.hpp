#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tsepi {

enum class ErrorCode {
  InvalidArgument,
  UndefinedResult,
  SceneSampling,
  Io,
  Format,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid-argument";
    case ErrorCode::UndefinedResult: return "undefined-result";
    case ErrorCode::SceneSampling: return "scene-sampling";
    case ErrorCode::Io: return "io-error";
    case ErrorCode::Format: return "format-error";
  }
  return "unknown";
}

/// Process exit status used by the command line tools for each error class.
constexpr int exit_status(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return 2;
    case ErrorCode::UndefinedResult: return 3;
    case ErrorCode::SceneSampling: return 4;
    case ErrorCode::Io: return 5;
    case ErrorCode::Format: return 6;
  }
  return 1;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, const std::string& message) {
  if (!condition) fail(ErrorCode::InvalidArgument, message);
}

}  // namespace tsepi
