#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace textseg {

enum class ErrorCode {
  MissingHeader,
  DimMismatch,
  NonFiniteData,
  LabelOutOfRange,
  EmptyInput,
  IndexOutOfRange,
  EmptyPrompt,
  KeyNotFound,
  BadTableFormat,
  ShapeMismatch,
  NonFiniteLoss,
  NonFiniteGradient,
  BadChecksum,
  ConfigMismatch,
  ConfigInvalid,
  EmptyMask,
  LengthMismatch,
  EmptyRegion,
  DegenerateField,
  StaleCache,
  EmptyForeground,
  NoForeground,
  CorpusMisaligned,
  MissingPair,
  BadCheckpoint,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure raised by the library carries one of the codes above so
/// callers (CLI, HTTP service, tests) can branch on the kind of failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace textseg
