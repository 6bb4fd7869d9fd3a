#include "wsi/error.hpp"

namespace wsi {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::NaNInGraph: return "NaNInGraph";
    case ErrorCode::DimNotDivisibleByHeads: return "DimNotDivisibleByHeads";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::StepOutOfRange: return "StepOutOfRange";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::MissingMetadata: return "MissingMetadata";
    case ErrorCode::CorruptTile: return "CorruptTile";
    case ErrorCode::UnknownFormat: return "UnknownFormat";
    case ErrorCode::UpsamplingRequired: return "UpsamplingRequired";
    case ErrorCode::SpecInvalid: return "SpecInvalid";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::EmptySlide: return "EmptySlide";
    case ErrorCode::InsufficientStain: return "InsufficientStain";
    case ErrorCode::DegenerateStain: return "DegenerateStain";
    case ErrorCode::WrongPatchSize: return "WrongPatchSize";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::EmptyBag: return "EmptyBag";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorCode::CheckpointShapeMismatch: return "CheckpointShapeMismatch";
    case ErrorCode::NoEventsInBatch: return "NoEventsInBatch";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::CollapseDetected: return "CollapseDetected";
    case ErrorCode::CorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::SingleClassOnly: return "SingleClassOnly";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::NoComparablePairs: return "NoComparablePairs";
    case ErrorCode::TooFewSlides: return "TooFewSlides";
    case ErrorCode::InvalidCell: return "InvalidCell";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::NaNInGraph:
    case ErrorCode::CollapseDetected:
      return ErrorCategory::Numeric;
    case ErrorCode::InvalidConfig:
    case ErrorCode::InvalidCell:
    case ErrorCode::MissingCheckpoint:
    case ErrorCode::CheckpointShapeMismatch:
    case ErrorCode::DimNotDivisibleByHeads:
    case ErrorCode::SpecInvalid:
      return ErrorCategory::Config;
    default:
      return ErrorCategory::Data;
  }
}

}  // namespace wsi
