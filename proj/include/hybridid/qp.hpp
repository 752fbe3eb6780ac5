#pragma once

// Dense strictly convex QP kernel.
//
//   min  ½ zᵀQz + (p + R y)ᵀ z
//   s.t. F z + G y ≤ h
//
// Solved by a dual active-set method (Goldfarb-Idnani) with incremental
// QR updates of the active constraint normals. The method needs no feasible
// starting point, detects infeasibility and returns exact active sets and
// multipliers, which the LC extraction and the MPCC branch solves rely on.

#include <optional>
#include <vector>

#include "hybridid/common.hpp"

namespace hybridid {
class DiffMaxAffineModel;
}

namespace hybridid::qp {

enum class QpStatus { Optimal, Infeasible, MaxIter };

const char* to_string(QpStatus status);

struct DenseQpOptions {
  double tol{1e-10};
  // <= 0 selects 50·(variables + constraints).
  int max_iter{0};
};

struct DenseQpResult {
  Vec z;
  Vec mu_eq;    // H z + g + Aeqᵀ mu_eq + Ainᵀ lambda = 0
  Vec lambda;   // >= 0, one per inequality row
  std::vector<int> active;  // active inequality rows
  QpStatus status{QpStatus::MaxIter};
  int iterations{0};
};

/// min ½zᵀHz + gᵀz s.t. Aeq z = beq, Ain z ≤ bin. H must be positive
/// definite. Linearly dependent equality rows are skipped when consistent.
[[nodiscard]] DenseQpResult solve_dense_qp(const Mat& H, const Vec& g, const Mat& Aeq,
                                           const Vec& beq, const Mat& Ain, const Vec& bin,
                                           const DenseQpOptions& opts = {});

/// Inequality-only parametric QP with parameter y = col(x, u).
class ParametricQP {
 public:
  ParametricQP(Mat Q, Mat R, Vec p, Mat F, Mat G, Vec h);

  [[nodiscard]] int num_vars() const { return static_cast<int>(Q_.rows()); }
  [[nodiscard]] int num_constraints() const { return static_cast<int>(F_.rows()); }
  [[nodiscard]] int param_dim() const { return static_cast<int>(R_.cols()); }

  [[nodiscard]] const Mat& Q() const { return Q_; }
  [[nodiscard]] const Mat& R() const { return R_; }
  [[nodiscard]] const Vec& p() const { return p_; }
  [[nodiscard]] const Mat& F() const { return F_; }
  [[nodiscard]] const Mat& G() const { return G_; }
  [[nodiscard]] const Vec& h() const { return h_; }

  /// Same problem with constraint rows reordered: row i of the result is
  /// row perm[i] of this problem.
  [[nodiscard]] ParametricQP permuted_rows(const std::vector<int>& perm) const;

 private:
  Mat Q_, R_;
  Vec p_;
  Mat F_, G_;
  Vec h_;
};

struct QpSolution {
  Vec z_star;
  Vec lambda;
  std::vector<int> active_rows;
  QpStatus status{QpStatus::MaxIter};
  int iterations{0};
};

[[nodiscard]] QpSolution solve_qp(const ParametricQP& qp, const Vec& y, double tol = 1e-10);

/// Max of the ∞-norms of stationarity, primal violation, negative
/// multipliers and complementarity products.
[[nodiscard]] double kkt_residual(const ParametricQP& qp, const Vec& y, const Vec& z,
                                  const Vec& lambda);

/// Consolidated α/β QP of a difference-of-max-affine model. Rows are ordered
/// component-major within each side: α rows (k·nr_α + i), then β rows.
/// The successor state is W z* with W = [I −I].
[[nodiscard]] ParametricQP build_consolidated_qp(const DiffMaxAffineModel& model);

/// W = [I_n  −I_n].
[[nodiscard]] Mat output_map(int n);

}  // namespace hybridid::qp
