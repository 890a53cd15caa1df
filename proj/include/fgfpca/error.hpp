#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fgfpca {

enum class ErrorKind {
  InvalidGrid,
  InvalidDataset,
  InvalidOutcome,
  InvalidBinWidth,
  InvalidBasis,
  InvalidLag,
  InvalidArgument,
  DimensionMismatch,
  InsufficientSubjects,
  InsufficientHistory,
  AsymmetricCovariance,
  GridMismatch,
  ModelFormatError,
  ParseError,
  NoVariation,
  SingularPrecision,
  ConvergenceError,
  UndefinedAUC,
};

inline std::string_view to_string(ErrorKind k) {
  switch (k) {
    case ErrorKind::InvalidGrid: return "InvalidGrid";
    case ErrorKind::InvalidDataset: return "InvalidDataset";
    case ErrorKind::InvalidOutcome: return "InvalidOutcome";
    case ErrorKind::InvalidBinWidth: return "InvalidBinWidth";
    case ErrorKind::InvalidBasis: return "InvalidBasis";
    case ErrorKind::InvalidLag: return "InvalidLag";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InsufficientSubjects: return "InsufficientSubjects";
    case ErrorKind::InsufficientHistory: return "InsufficientHistory";
    case ErrorKind::AsymmetricCovariance: return "AsymmetricCovariance";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::ModelFormatError: return "ModelFormatError";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::NoVariation: return "NoVariation";
    case ErrorKind::SingularPrecision: return "SingularPrecision";
    case ErrorKind::ConvergenceError: return "ConvergenceError";
    case ErrorKind::UndefinedAUC: return "UndefinedAUC";
  }
  return "Unknown";
}

// Numerical failures are distinguished from bad input so the CLI can map
// them to different exit codes.
inline bool is_numerical(ErrorKind k) {
  switch (k) {
    case ErrorKind::NoVariation:
    case ErrorKind::SingularPrecision:
    case ErrorKind::ConvergenceError:
    case ErrorKind::UndefinedAUC:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string module, const std::string& what)
      : std::runtime_error(what), kind_(kind), module_(std::move(module)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& module() const noexcept { return module_; }

 private:
  ErrorKind kind_;
  std::string module_;
};

}  // namespace fgfpca
