#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mfsv {

enum class ErrorCode {
  invalid_dimensions,
  invalid_argument,
  nonstationary,
  invalid_variance,
  singular_matrix,
  rotation_failure,
  rank_deficient,
  degenerate_simulation,
  numerical_degeneracy,
  parse_error,
  io_error,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_dimensions: return "invalid-dimensions";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::nonstationary: return "nonstationary";
    case ErrorCode::invalid_variance: return "invalid-variance";
    case ErrorCode::singular_matrix: return "singular-matrix";
    case ErrorCode::rotation_failure: return "rotation-failure";
    case ErrorCode::rank_deficient: return "rank-deficient";
    case ErrorCode::degenerate_simulation: return "degenerate-simulation";
    case ErrorCode::numerical_degeneracy: return "numerical-degeneracy";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::io_error: return "io-error";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace mfsv
