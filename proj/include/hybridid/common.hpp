#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace hybridid {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

enum class ErrorCode {
  DimensionMismatch,
  InvalidArgument,
  Infeasible,
  Divergence,
  DegenerateTarget,
  Parse,
  Io,
};

const char* to_string(ErrorCode code);

/// Structured error carried by every failing library call.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require_dims(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::DimensionMismatch, what);
}

inline void require_arg(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::InvalidArgument, what);
}

/// Axis-aligned box over col(x, u).
struct Box {
  Vec lo, hi;
};

inline bool all_finite(const Eigen::Ref<const Mat>& m) { return m.allFinite(); }

}  // namespace hybridid
