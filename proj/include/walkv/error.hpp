#pragma once

#include <stdexcept>
#include <string>

namespace walkv {

enum class ErrorCode {
  kInvalidArgument,
  kCorruption,
  kOutOfRange,
  kClosed,
  kIoError,
  kLockConflict,
  kBusy,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kCorruption: return "corruption";
    case ErrorCode::kOutOfRange: return "out of range";
    case ErrorCode::kClosed: return "closed";
    case ErrorCode::kIoError: return "io error";
    case ErrorCode::kLockConflict: return "lock conflict";
    case ErrorCode::kBusy: return "busy";
  }
  return "unknown";
}

}  // namespace walkv
