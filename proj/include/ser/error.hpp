#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ser {

enum class ErrorCode {
  FileNotFound,
  MalformedWav,
  UnsupportedEncoding,
  ConstantSignal,
  SignalTooShort,
  DegenerateFilter,
  ShapeMismatch,
  ConstantFeatures,
  BatchTooSmall,
  LabelOutOfRange,
  NotScalar,
  GraphConsumed,
  InsufficientClassSamples,
  EmptySplit,
  NonFiniteLoss,
  BadMagic,
  VersionMismatch,
  LengthMismatch,
  EmptyMatrix,
  IoError,
  ConfigError,
  MissingFeatureCache,
  GradcheckFailed,
};

std::string_view to_string(ErrorCode code);

/// Process exit status for a failure of the given kind:
/// 1 usage/config, 2 data, 3 numerical.
int exit_code_for(ErrorCode code);

/// The single exception type thrown by the library. `code()` identifies the
/// failure; `what()` carries a human-readable diagnostic.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  ErrorCode code() const noexcept { return code_; }
  /// The diagnostic without the code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

}  // namespace ser
