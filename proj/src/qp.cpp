#include "hybridid/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hybridid/model.hpp"

namespace hybridid::qp {

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Optimal: return "optimal";
    case QpStatus::Infeasible: return "infeasible";
    case QpStatus::MaxIter: return "max_iter";
  }
  return "unknown";
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Active-set factorization for the dual method. With L Lᵀ = H and the active
// normals N, L⁻¹N = Q [R; 0]; we keep J = L⁻ᵀQ and the triangular R.
class ActiveFactor {
 public:
  explicit ActiveFactor(const Mat& Linv_t) : J_(Linv_t), R_(Mat::Zero(J_.rows(), J_.rows())) {}

  [[nodiscard]] int size() const { return q_; }
  [[nodiscard]] int dim() const { return static_cast<int>(J_.rows()); }

  // Primal step (z-direction) and dual step r for constraint normal np.
  // Returns the norm of the part of Jᵀnp outside the active span.
  double step(const Vec& np, Vec& z_step, Vec& r) const {
    const int s = dim();
    const Vec d = J_.transpose() * np;
    const int free = s - q_;
    if (free > 0) {
      z_step = J_.rightCols(free) * d.tail(free);
    } else {
      z_step = Vec::Zero(s);
    }
    r = R_.topLeftCorner(q_, q_).triangularView<Eigen::Upper>().solve(d.head(q_));
    return free > 0 ? d.tail(free).norm() : 0.0;
  }

  void add(const Vec& np) {
    const int s = dim();
    Vec d = J_.transpose() * np;
    for (int j = s - 1; j > q_; --j) {
      const double a = d(j - 1), b = d(j);
      if (b == 0.0) continue;
      const double rho = std::hypot(a, b);
      const double c = a / rho, sn = b / rho;
      d(j - 1) = rho;
      d(j) = 0.0;
      rotate_cols(j - 1, j, c, sn);
    }
    R_.col(q_).head(q_ + 1) = d.head(q_ + 1);
    ++q_;
  }

  void drop(int k) {
    // Remove column k, then restore the triangle with row rotations.
    for (int col = k; col < q_ - 1; ++col) R_.col(col).head(q_) = R_.col(col + 1).head(q_);
    R_.col(q_ - 1).setZero();
    for (int j = k; j < q_ - 1; ++j) {
      const double a = R_(j, j), b = R_(j + 1, j);
      if (b == 0.0) continue;
      const double rho = std::hypot(a, b);
      const double c = a / rho, sn = b / rho;
      for (int col = j; col < q_ - 1; ++col) {
        const double x = R_(j, col), y = R_(j + 1, col);
        R_(j, col) = c * x + sn * y;
        R_(j + 1, col) = -sn * x + c * y;
      }
      rotate_cols(j, j + 1, c, sn);
    }
    R_.row(q_ - 1).setZero();
    --q_;
  }

 private:
  void rotate_cols(int a, int b, double c, double sn) {
    for (int row = 0; row < J_.rows(); ++row) {
      const double x = J_(row, a), y = J_(row, b);
      J_(row, a) = c * x + sn * y;
      J_(row, b) = -sn * x + c * y;
    }
  }

  Mat J_;
  Mat R_;
  int q_{0};
};

}  // namespace

DenseQpResult solve_dense_qp(const Mat& H, const Vec& g, const Mat& Aeq, const Vec& beq,
                             const Mat& Ain, const Vec& bin, const DenseQpOptions& opts) {
  const int s = static_cast<int>(H.rows());
  const int me = static_cast<int>(Aeq.rows());
  const int mi = static_cast<int>(Ain.rows());
  require_dims(H.cols() == s && g.size() == s, "QP Hessian/gradient shape");
  require_dims((me == 0 || Aeq.cols() == s) && beq.size() == me, "QP equality shape");
  require_dims((mi == 0 || Ain.cols() == s) && bin.size() == mi, "QP inequality shape");

  Eigen::LLT<Mat> llt(H);
  require_arg(llt.info() == Eigen::Success, "QP Hessian is not positive definite");
  const Mat L = llt.matrixL();
  const Mat Linv = L.triangularView<Eigen::Lower>().solve(Mat::Identity(s, s));

  DenseQpResult out;
  out.z = llt.solve(-g);
  out.mu_eq = Vec::Zero(me);
  out.lambda = Vec::Zero(mi);
  const int max_iter = opts.max_iter > 0 ? opts.max_iter : 50 * (s + me + mi);
  const double tol = opts.tol;

  ActiveFactor fac(Linv.transpose());
  std::vector<int> act;  // constraint ids: [0, me) equalities, me + j inequality j
  Vec u(0);
  std::vector<char> in_active(mi, 0);

  // Constraints in the form nᵀz ≥ b; the multiplier u satisfies
  // H z + g − Σ u n = 0.
  auto normal = [&](int id) -> Vec {
    return id < me ? Vec(Aeq.row(id).transpose()) : Vec(-Ain.row(id - me).transpose());
  };
  auto rhs = [&](int id) { return id < me ? beq(id) : -bin(id - me); };

  Vec z_step, r;
  for (int i = 0; i < me; ++i) {
    const Vec np = normal(i);
    const double sp = np.dot(out.z) - rhs(i);
    const double free_norm = fac.step(np, z_step, r);
    const double scale = 1.0 + std::abs(rhs(i)) + np.cwiseAbs().maxCoeff();
    if (free_norm <= 1e-12 * std::max(1.0, np.norm())) {
      if (std::abs(sp) <= 1e3 * tol * scale) continue;  // redundant and consistent
      out.status = QpStatus::Infeasible;
      return out;
    }
    const double t = -sp / z_step.dot(np);
    out.z += t * z_step;
    u -= t * r;
    fac.add(np);
    act.push_back(i);
    u.conservativeResize(u.size() + 1);
    u(u.size() - 1) = t;
    ++out.iterations;
  }

  Vec row_norm(mi);
  for (int j = 0; j < mi; ++j) row_norm(j) = std::max(Ain.row(j).norm(), 1e-300);

  while (true) {
    if (out.iterations >= max_iter) {
      out.status = QpStatus::MaxIter;
      break;
    }
    // Most violated inequality (normalized by its row norm).
    int p = -1;
    double worst = 0.0;
    if (mi > 0) {
      const Vec viol = Ain * out.z - bin;
      for (int j = 0; j < mi; ++j) {
        if (in_active[j]) continue;
        const double lim = tol * std::max(1.0, std::abs(bin(j)));
        if (viol(j) > lim) {
          const double v = viol(j) / row_norm(j);
          if (v > worst) {
            worst = v;
            p = j;
          }
        }
      }
    }
    if (p < 0) {
      out.status = QpStatus::Optimal;
      break;
    }

    const int pid = me + p;
    const Vec np = normal(pid);
    const double bp = rhs(pid);
    Vec uplus(u.size() + 1);
    uplus << u, 0.0;
    bool added = false;
    bool failed = false;
    while (!added) {
      if (++out.iterations > max_iter) {
        out.status = QpStatus::MaxIter;
        failed = true;
        break;
      }
      const double free_norm = fac.step(np, z_step, r);
      const int q = fac.size();
      double t1 = kInf;
      int k = -1;
      for (int j = 0; j < q; ++j) {
        if (act[j] < me) continue;
        if (r(j) > 0.0) {
          const double ratio = std::max(uplus(j), 0.0) / r(j);
          if (ratio < t1) {
            t1 = ratio;
            k = j;
          }
        }
      }
      const bool dependent = free_norm <= 1e-12 * std::max(1.0, np.norm());
      const double sp = np.dot(out.z) - bp;
      const double t2 = dependent ? kInf : -sp / z_step.dot(np);
      const double t = std::min(t1, t2);
      if (t == kInf) {
        out.status = QpStatus::Infeasible;
        failed = true;
        break;
      }
      if (!dependent) out.z += t * z_step;
      uplus.head(q) -= t * r;
      uplus(q) += t;
      if (!dependent && t2 <= t1) {
        fac.add(np);
        act.push_back(pid);
        in_active[p] = 1;
        u = uplus;
        added = true;
      } else {
        // Partial step: constraint k leaves the active set.
        in_active[act[k] - me] = 0;
        fac.drop(k);
        act.erase(act.begin() + k);
        Vec next(uplus.size() - 1);
        next << uplus.head(k), uplus.tail(uplus.size() - k - 1);
        uplus = next;
      }
    }
    if (failed) break;
  }

  for (std::size_t j = 0; j < act.size(); ++j) {
    if (act[j] < me) {
      out.mu_eq(act[j]) = -u(static_cast<int>(j));
    } else {
      out.lambda(act[j] - me) = std::max(u(static_cast<int>(j)), 0.0);
      out.active.push_back(act[j] - me);
    }
  }
  std::sort(out.active.begin(), out.active.end());
  return out;
}

ParametricQP::ParametricQP(Mat Q, Mat R, Vec p, Mat F, Mat G, Vec h)
    : Q_(std::move(Q)), R_(std::move(R)), p_(std::move(p)), F_(std::move(F)), G_(std::move(G)),
      h_(std::move(h)) {
  const auto s = Q_.rows();
  const auto l = F_.rows();
  require_dims(Q_.cols() == s && p_.size() == s && R_.rows() == s, "QP cost shape");
  require_dims(F_.cols() == s && G_.rows() == l && h_.size() == l && G_.cols() == R_.cols(),
               "QP constraint shape");
  require_arg(l >= 1, "parametric QP needs at least one constraint");
  require_arg((Q_ - Q_.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + Q_.cwiseAbs().maxCoeff()),
              "Q must be symmetric");
  Eigen::SelfAdjointEigenSolver<Mat> eig(Q_, Eigen::EigenvaluesOnly);
  require_arg(eig.eigenvalues().minCoeff() > 0.0, "Q must be positive definite");
}

ParametricQP ParametricQP::permuted_rows(const std::vector<int>& perm) const {
  require_dims(static_cast<int>(perm.size()) == num_constraints(), "permutation length");
  Mat F(F_.rows(), F_.cols()), G(G_.rows(), G_.cols());
  Vec h(h_.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    F.row(i) = F_.row(perm[i]);
    G.row(i) = G_.row(perm[i]);
    h(i) = h_(perm[i]);
  }
  return {Q_, R_, p_, F, G, h};
}

QpSolution solve_qp(const ParametricQP& qp, const Vec& y, double tol) {
  require_dims(y.size() == qp.param_dim(), "QP parameter length");
  require_arg(tol > 0.0, "tolerance must be positive");
  const Vec g = qp.p() + qp.R() * y;
  const Vec b = qp.h() - qp.G() * y;
  DenseQpOptions opts;
  opts.tol = tol;
  auto res = solve_dense_qp(qp.Q(), g, Mat(0, qp.num_vars()), Vec(0), qp.F(), b, opts);
  return {std::move(res.z), std::move(res.lambda), std::move(res.active), res.status,
          res.iterations};
}

double kkt_residual(const ParametricQP& qp, const Vec& y, const Vec& z, const Vec& lambda) {
  require_dims(y.size() == qp.param_dim() && z.size() == qp.num_vars() &&
                   lambda.size() == qp.num_constraints(),
               "kkt_residual argument shapes");
  const Vec stat = qp.Q() * z + qp.R() * y + qp.p() + qp.F().transpose() * lambda;
  const Vec slack = qp.h() - qp.F() * z - qp.G() * y;
  double res = stat.cwiseAbs().maxCoeff();
  res = std::max(res, (-slack).cwiseMax(0.0).maxCoeff());
  res = std::max(res, (-lambda).cwiseMax(0.0).maxCoeff());
  res = std::max(res, lambda.cwiseProduct(slack).cwiseAbs().maxCoeff());
  return res;
}

Mat output_map(int n) {
  Mat W(n, 2 * n);
  W << Mat::Identity(n, n), -Mat::Identity(n, n);
  return W;
}

ParametricQP build_consolidated_qp(const DiffMaxAffineModel& model) {
  const int n = model.n(), m = model.m();
  const int ra = model.nr_alpha(), rb = model.nr_beta();
  const int s = 2 * n;
  const int l = n * (ra + rb);

  Vec hdiag(s);
  hdiag << model.h_alpha(), model.h_beta();
  const Mat Q = hdiag.asDiagonal();

  // Target map γ(y) = A_γ x + B_γ u + c_γ stacks ψ over φ.
  Mat gamma_xu(s, n + m);
  gamma_xu.topRows(n) << model.psi().A, model.psi().B;
  gamma_xu.bottomRows(n) << model.phi().A, model.phi().B;
  Vec gamma_c(s);
  gamma_c << model.psi().c, model.phi().c;
  const Mat R = -(hdiag.asDiagonal() * gamma_xu);
  const Vec p = -(hdiag.asDiagonal() * gamma_c);

  // S_ξ = blockdiag(I_n ⊗ 1_{nr_α}, I_n ⊗ 1_{nr_β}); F = −S_ξ.
  Mat F = Mat::Zero(l, s);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < ra; ++i) F(k * ra + i, k) = -1.0;
    for (int j = 0; j < rb; ++j) F(n * ra + k * rb + j, n + k) = -1.0;
  }
  const Mat sa = stack_pieces(model.alpha_pieces(), n, m);
  const Mat sb = stack_pieces(model.beta_pieces(), n, m);
  Mat G(l, n + m);
  G << sa.leftCols(n + m), sb.leftCols(n + m);
  Vec h(l);
  h << -sa.col(n + m), -sb.col(n + m);
  return {Q, R, p, F, G, h};
}

}  // namespace hybridid::qp
