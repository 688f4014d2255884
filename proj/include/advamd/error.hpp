#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace advamd {

enum class ErrorCode {
  ShapeMismatch,
  UnknownNode,
  NonScalarLoss,
  NonDeterministicFunction,
  BatchTooSmall,
  WidthMismatch,
  InsufficientSamples,
  InvalidPhi,
  InvalidArgument,
  MissingAuxBN,
  EmptyDataset,
  EmptyList,
  DuplicateMeans,
  BadMagic,
  CountMismatch,
  MalformedRow,
  VersionMismatch,
  CorruptFile,
  TopologyMismatch,
  Io,
  Config,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::UnknownNode: return "UnknownNode";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::NonDeterministicFunction: return "NonDeterministicFunction";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::WidthMismatch: return "WidthMismatch";
    case ErrorCode::InsufficientSamples: return "InsufficientSamples";
    case ErrorCode::InvalidPhi: return "InvalidPhi";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::MissingAuxBN: return "MissingAuxBN";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::DuplicateMeans: return "DuplicateMeans";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::CountMismatch: return "CountMismatch";
    case ErrorCode::MalformedRow: return "MalformedRow";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::CorruptFile: return "CorruptFile";
    case ErrorCode::TopologyMismatch: return "TopologyMismatch";
    case ErrorCode::Io: return "Io";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace advamd
