#include "rdm/error.hpp"

namespace rdm {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ValueTooLarge:
      return "ValueTooLarge";
    case ErrorCode::Truncated:
      return "Truncated";
    case ErrorCode::InvalidMarker:
      return "InvalidMarker";
    case ErrorCode::MalformedNesting:
      return "MalformedNesting";
    case ErrorCode::InvalidHeader:
      return "InvalidHeader";
    case ErrorCode::IoFailure:
      return "IoFailure";
    case ErrorCode::UnknownStream:
      return "UnknownStream";
    case ErrorCode::NonMonotonicTimestamp:
      return "NonMonotonicTimestamp";
    case ErrorCode::WriterClosed:
      return "WriterClosed";
    case ErrorCode::BadMagic:
      return "BadMagic";
    case ErrorCode::UnsupportedVersion:
      return "UnsupportedVersion";
    case ErrorCode::MissingIndex:
      return "MissingIndex";
    case ErrorCode::CorruptHeader:
      return "CorruptHeader";
    case ErrorCode::CorruptCluster:
      return "CorruptCluster";
    case ErrorCode::NoKeyframeBefore:
      return "NoKeyframeBefore";
    case ErrorCode::ShapeMismatch:
      return "ShapeMismatch";
    case ErrorCode::UnknownDtypeTag:
      return "UnknownDtypeTag";
    case ErrorCode::MissingKeyframe:
      return "MissingKeyframe";
    case ErrorCode::CorruptPayload:
      return "CorruptPayload";
    case ErrorCode::RecorderClosed:
      return "RecorderClosed";
    case ErrorCode::DtypeMismatch:
      return "DtypeMismatch";
    case ErrorCode::CorruptInput:
      return "CorruptInput";
    case ErrorCode::PlanIncompatible:
      return "PlanIncompatible";
    case ErrorCode::CacheCorrupt:
      return "CacheCorrupt";
    case ErrorCode::RangeOutOfBounds:
      return "RangeOutOfBounds";
    case ErrorCode::InsufficientSpace:
      return "InsufficientSpace";
    case ErrorCode::EmptyReference:
      return "EmptyReference";
    case ErrorCode::InvalidSpec:
      return "InvalidSpec";
    case ErrorCode::CorruptDump:
      return "CorruptDump";
    case ErrorCode::DivisionByZeroSize:
      return "DivisionByZeroSize";
    case ErrorCode::NoEpisodesFound:
      return "NoEpisodesFound";
    case ErrorCode::IndexOutOfRange:
      return "IndexOutOfRange";
    case ErrorCode::InvalidArgument:
      return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace rdm
