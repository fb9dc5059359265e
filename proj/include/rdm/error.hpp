#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace rdm {

enum class ErrorCode {
  // ebml
  ValueTooLarge,
  Truncated,
  InvalidMarker,
  MalformedNesting,
  // container
  InvalidHeader,
  IoFailure,
  UnknownStream,
  NonMonotonicTimestamp,
  WriterClosed,
  BadMagic,
  UnsupportedVersion,
  MissingIndex,
  CorruptHeader,
  CorruptCluster,
  NoKeyframeBefore,
  // codecs
  ShapeMismatch,
  UnknownDtypeTag,
  MissingKeyframe,
  CorruptPayload,
  // recorder
  RecorderClosed,
  DtypeMismatch,
  CorruptInput,
  PlanIncompatible,
  // loader
  CacheCorrupt,
  RangeOutOfBounds,
  InsufficientSpace,
  EmptyReference,
  // cli
  InvalidSpec,
  CorruptDump,
  DivisionByZeroSize,
  // dataset handle
  NoEpisodesFound,
  IndexOutOfRange,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

/// Every failure in the library is reported as an Error carrying a code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), message_(message) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }
  /// The message without the code prefix.
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

 private:
  ErrorCode code_;
  std::string message_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace rdm
