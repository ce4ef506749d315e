#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace prodretrieve {

enum class ErrorCode {
  // embed_store
  MagicMismatch,
  TruncatedFile,
  DuplicateId,
  NonFiniteValue,
  InvalidId,
  IoFailure,
  ZeroVector,
  MisalignedScales,
  DimMismatch,
  // search_core
  NotNormalized,
  UnmappedCropId,
  InvalidCropMap,
  MalformedInput,
  // rerank / harness
  TooFewItems,
  InvalidParams,
  CorruptShard,
  ShardsMissing,
  ManifestInvalid,
  // ensemble
  ShapeMismatch,
  IdMismatch,
  DuplicateBallot,
  // pseudolabel
  PoolTooSmall,
  TargetBelowClusterCount,
  // evalbench
  UnknownGalleryId,
  // cli
  ConfigInvalid,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::MagicMismatch: return "MagicMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::InvalidId: return "InvalidId";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::MisalignedScales: return "MisalignedScales";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NotNormalized: return "NotNormalized";
    case ErrorCode::UnmappedCropId: return "UnmappedCropId";
    case ErrorCode::InvalidCropMap: return "InvalidCropMap";
    case ErrorCode::MalformedInput: return "MalformedInput";
    case ErrorCode::TooFewItems: return "TooFewItems";
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::CorruptShard: return "CorruptShard";
    case ErrorCode::ShardsMissing: return "ShardsMissing";
    case ErrorCode::ManifestInvalid: return "ManifestInvalid";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IdMismatch: return "IdMismatch";
    case ErrorCode::DuplicateBallot: return "DuplicateBallot";
    case ErrorCode::PoolTooSmall: return "PoolTooSmall";
    case ErrorCode::TargetBelowClusterCount: return "TargetBelowClusterCount";
    case ErrorCode::UnknownGalleryId: return "UnknownGalleryId";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above; the CLI
/// prints `error_name(code())` on stderr and maps the code to an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace prodretrieve
