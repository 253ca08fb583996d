#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace imbpos {

enum class ErrorCode {
  MalformedRow,
  UnknownLabel,
  EmptyFile,
  EmptyInput,
  DomainError,
  ClassTooSmall,
  RatioTooLarge,
  BadGeometry,
  KTooLarge,
  TooFewSamples,
  ShapeMismatch,
  NonFiniteLoss,
  SingleClass,
  ConfigError,
  LengthMismatch,
  LabelOutOfRange,
  ZeroBaseline,
  TooManyTrials,
  IoError,
};

std::string_view to_string(ErrorCode code);

// Every failure raised by the library carries a code so callers and tests can
// branch on the kind of failure instead of the message text.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace imbpos
