#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace vivo {

// 64-bit floats everywhere. Desk-scale models are small enough that the
// cleaner numerics (finite-difference checks, cross-run determinism) are
// worth far more than speed.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

enum class ErrorKind {
  // tokenizer
  UnknownCharacter,
  // batch builder
  EmptyTags,
  EmptyCaption,
  OverLength,
  MalformedPrefix,
  // encoder
  ShapeMismatch,
  NonFiniteInput,
  MissingForwardCache,
  CorruptCheckpoint,
  // matching
  NonSquare,
  NonFinite,
  EmptyPlan,
  BlockLengthMismatch,
  // decoder
  EmptyConstraint,
  NoHypothesis,
  // trainer / cli
  DataError,
  DivergedLoss,
  ConfigError,
  IoError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

  // CLI exit code category: 2 config, 3 data, 4 numeric, 5 I/O.
  int exit_code() const;

 private:
  ErrorKind kind_;
};

}  // namespace vivo
