#include "textseg/error.hpp"

namespace textseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingHeader: return "MissingHeader";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::NonFiniteData: return "NonFiniteData";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EmptyPrompt: return "EmptyPrompt";
    case ErrorCode::KeyNotFound: return "KeyNotFound";
    case ErrorCode::BadTableFormat: return "BadTableFormat";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::BadChecksum: return "BadChecksum";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::DegenerateField: return "DegenerateField";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::EmptyForeground: return "EmptyForeground";
    case ErrorCode::NoForeground: return "NoForeground";
    case ErrorCode::CorpusMisaligned: return "CorpusMisaligned";
    case ErrorCode::MissingPair: return "MissingPair";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace textseg
