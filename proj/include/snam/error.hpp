#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace snam {

/// Failure categories raised by the library.
enum class ErrorCode {
  degenerate_data,
  singular_system,
  dimension_mismatch,
  invalid_bandwidth,
  wrong_unit_kind,
  non_binary_target,
  non_finite_gradient,
  knot_collapse,
  diverged_fit,
  singular_normal_equations,
  not_positive_definite,
  too_many_parameters,
  schema_mismatch,
  empty_file,
  constant_column,
  zero_variance,
  too_few_rows,
  single_class_auc,
  invalid_config,
  io_error,
  checksum_mismatch,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::degenerate_data: return "DegenerateData";
    case ErrorCode::singular_system: return "SingularSystem";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::invalid_bandwidth: return "InvalidBandwidth";
    case ErrorCode::wrong_unit_kind: return "WrongUnitKind";
    case ErrorCode::non_binary_target: return "NonBinaryTarget";
    case ErrorCode::non_finite_gradient: return "NonFiniteGradient";
    case ErrorCode::knot_collapse: return "KnotCollapse";
    case ErrorCode::diverged_fit: return "DivergedFit";
    case ErrorCode::singular_normal_equations: return "SingularNormalEquations";
    case ErrorCode::not_positive_definite: return "NotPositiveDefinite";
    case ErrorCode::too_many_parameters: return "TooManyParameters";
    case ErrorCode::schema_mismatch: return "SchemaMismatch";
    case ErrorCode::empty_file: return "EmptyFile";
    case ErrorCode::constant_column: return "ConstantColumn";
    case ErrorCode::zero_variance: return "ZeroVariance";
    case ErrorCode::too_few_rows: return "TooFewRows";
    case ErrorCode::single_class_auc: return "SingleClassAUC";
    case ErrorCode::invalid_config: return "InvalidConfig";
    case ErrorCode::io_error: return "IoError";
    case ErrorCode::checksum_mismatch: return "ChecksumMismatch";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace snam
