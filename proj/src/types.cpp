#include "vivo/types.hpp"

namespace vivo {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UnknownCharacter: return "UnknownCharacter";
    case ErrorKind::EmptyTags: return "EmptyTags";
    case ErrorKind::EmptyCaption: return "EmptyCaption";
    case ErrorKind::OverLength: return "OverLength";
    case ErrorKind::MalformedPrefix: return "MalformedPrefix";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::MissingForwardCache: return "MissingForwardCache";
    case ErrorKind::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorKind::NonSquare: return "NonSquare";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::EmptyPlan: return "EmptyPlan";
    case ErrorKind::BlockLengthMismatch: return "BlockLengthMismatch";
    case ErrorKind::EmptyConstraint: return "EmptyConstraint";
    case ErrorKind::NoHypothesis: return "NoHypothesis";
    case ErrorKind::DataError: return "DataError";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
  }
  return "Error";
}

int Error::exit_code() const {
  switch (kind_) {
    case ErrorKind::ConfigError:
      return 2;
    case ErrorKind::DivergedLoss:
    case ErrorKind::NonFinite:
    case ErrorKind::NonFiniteInput:
      return 4;
    case ErrorKind::IoError:
    case ErrorKind::CorruptCheckpoint:
      return 5;
    default:
      return 3;
  }
}

}  // namespace vivo
