#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace flab {

// Dense row-major storage throughout; latent dimensions stay small (<= 243).
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::RowVectorXd;
using ColVec = Eigen::VectorXd;

// Mirrors flab_status in the C header; keep the numeric values in sync.
enum class ErrorCode : int {
  kOk = 0,
  kInvalidArgument = 1,
  kOutOfRange = 2,
  kZeroProbabilityToken = 3,
  kEnumerationTooLarge = 4,
  kNonClassicalState = 5,
  kDegenerateSpectrum = 6,
  kShapeMismatch = 7,
  kConfig = 8,
  kIo = 9,
  kTrainingDiverged = 10,
  kUnsupported = 11,
  kInternal = 12,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

// Probability mass at or below this is treated as an impossible observation.
inline constexpr double kZeroProbabilityTol = 1e-12;

}  // namespace flab
