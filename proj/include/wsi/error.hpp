#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace wsi {

enum class ErrorCode {
  // tensor_core
  NonScalarLoss,
  NaNInGraph,
  DimNotDivisibleByHeads,
  ShapeMismatch,
  StepOutOfRange,
  BadCheckpoint,
  // slide_io
  MissingMetadata,
  CorruptTile,
  UnknownFormat,
  UpsamplingRequired,
  SpecInvalid,
  BadManifest,
  // preprocess
  EmptySlide,
  InsufficientStain,
  DegenerateStain,
  // features
  WrongPatchSize,
  BadMagic,
  DimMismatch,
  TruncatedFile,
  // aggregators
  EmptyBag,
  EmptyRegion,
  EmptyInput,
  MissingCheckpoint,
  CheckpointShapeMismatch,
  NoEventsInBatch,
  InvalidConfig,
  // ssl_pretrain
  EmptyBatch,
  CollapseDetected,
  CorpusTooSmall,
  // evaluation
  SingleClassOnly,
  MissingClass,
  NoComparablePairs,
  TooFewSlides,
  // harness
  InvalidCell,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Coarse failure category, used by the CLI to pick an exit code.
enum class ErrorCategory { Config, Data, Numeric };

ErrorCategory category_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

}  // namespace wsi
