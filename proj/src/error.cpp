#include "ser/error.hpp"

namespace ser {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::FileNotFound: return "FileNotFound";
    case ErrorCode::MalformedWav: return "MalformedWav";
    case ErrorCode::UnsupportedEncoding: return "UnsupportedEncoding";
    case ErrorCode::ConstantSignal: return "ConstantSignal";
    case ErrorCode::SignalTooShort: return "SignalTooShort";
    case ErrorCode::DegenerateFilter: return "DegenerateFilter";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::ConstantFeatures: return "ConstantFeatures";
    case ErrorCode::BatchTooSmall: return "BatchTooSmall";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::GraphConsumed: return "GraphConsumed";
    case ErrorCode::InsufficientClassSamples: return "InsufficientClassSamples";
    case ErrorCode::EmptySplit: return "EmptySplit";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyMatrix: return "EmptyMatrix";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingFeatureCache: return "MissingFeatureCache";
    case ErrorCode::GradcheckFailed: return "GradcheckFailed";
  }
  return "Unknown";
}

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
      return 1;
    case ErrorCode::NonFiniteLoss:
    case ErrorCode::GradcheckFailed:
      return 3;
    default:
      return 2;
  }
}

}  // namespace ser
