#include "hybridid/ocp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hybridid/qp.hpp"

namespace hybridid {

namespace {

void check_psd(const Mat& M, int dim, const char* name) {
  require_dims(M.rows() == dim && M.cols() == dim, std::string(name) + " must be square of the state/input size");
  require_arg(M.allFinite(), std::string(name) + " has non-finite entries");
  const double scale = 1.0 + M.cwiseAbs().maxCoeff();
  require_arg((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * scale,
              std::string(name) + " must be symmetric");
  if (dim == 0) return;
  const double lo = Eigen::SelfAdjointEigenSolver<Mat>(M).eigenvalues().minCoeff();
  require_arg(lo >= -1e-12 * scale, std::string(name) + " must be positive semidefinite");
}

/// Everything expressed in z = [U; W], U = [u_0; …; u_{T−1}], W = [w_0; …].
///   X = [x_1; …; x_T] = Xc + Xz z,   s = S z + s0,   J = ½zᵀHz + gᵀz + c
struct Condensed {
  int n, m, l, T, nu, nw, N;
  Mat Xz;
  Vec Xc;
  Mat S;
  Vec s0;
  Mat H;
  Vec g;
  double c{0.0};

  [[nodiscard]] double cost(const Vec& z) const { return 0.5 * z.dot(H * z) + g.dot(z) + c; }
  [[nodiscard]] Vec slack(const Vec& z) const { return S * z + s0; }
};

Condensed condense(const MpccProblem& p) {
  const auto& lc = p.lc;
  Condensed k;
  k.n = p.n();
  k.m = p.m();
  k.l = p.l();
  k.T = p.T;
  k.nu = k.m * k.T;
  k.nw = k.l * k.T;
  k.N = k.nu + k.nw;
  const int n = k.n, m = k.m, l = k.l, T = k.T, N = k.N;

  k.Xz = Mat::Zero(n * T, N);
  k.Xc = Vec::Zero(n * T);
  k.S = Mat::Zero(l * T, N);
  k.s0 = Vec::Zero(l * T);
  Mat prev_z = Mat::Zero(n, N);
  Vec prev_c = p.x0;
  for (int t = 0; t < T; ++t) {
    // s_t uses x_t (the state before input t).
    if (l > 0) {
      k.S.middleRows(t * l, l) = lc.E_x * prev_z;
      k.S.block(t * l, t * m, l, m) += lc.E_u;
      k.S.block(t * l, k.nu + t * l, l, l) += lc.E_w;
      k.s0.segment(t * l, l) = lc.E_x * prev_c + lc.e;
    }
    Mat next_z = lc.A * prev_z;
    next_z.block(0, t * m, n, m) += lc.B_u;
    if (l > 0) next_z.block(0, k.nu + t * l, n, l) += lc.B_w;
    Vec next_c = lc.A * prev_c + lc.d;
    k.Xz.middleRows(t * n, n) = next_z;
    k.Xc.segment(t * n, n) = next_c;
    prev_z = std::move(next_z);
    prev_c = std::move(next_c);
  }

  const auto& cs = p.cost;
  k.H = Mat::Zero(N, N);
  k.g = Vec::Zero(N);
  k.c = 0.0;
  auto add_state_term = [&](int t, const Mat& W) {
    const auto Z = k.Xz.middleRows(t * n, n);
    const Vec off = k.Xc.segment(t * n, n) - cs.reference.col(t);
    k.H.noalias() += 2.0 * Z.transpose() * W * Z;
    k.g.noalias() += 2.0 * Z.transpose() * (W * off);
    k.c += off.dot(W * off);
  };
  for (int t = 0; t < T; ++t) {
    add_state_term(t, cs.Q);
    k.H.block(t * m, t * m, m, m) += 2.0 * cs.R;
    // δ_t = u_t − u_{t−1}
    k.H.block(t * m, t * m, m, m) += 2.0 * cs.R_delta;
    if (t > 0) {
      k.H.block((t - 1) * m, (t - 1) * m, m, m) += 2.0 * cs.R_delta;
      k.H.block(t * m, (t - 1) * m, m, m) -= 2.0 * cs.R_delta;
      k.H.block((t - 1) * m, t * m, m, m) -= 2.0 * cs.R_delta;
    } else {
      k.g.segment(0, m) -= 2.0 * cs.R_delta * p.u_prev;
      k.c += p.u_prev.dot(cs.R_delta * p.u_prev);
    }
  }
  if (cs.Q_T.size() > 0) add_state_term(T - 1, cs.Q_T);
  k.H = 0.5 * (k.H + k.H.transpose());
  return k;
}

Vec stack_rows(const Mat& M) {
  Vec v(M.size());
  for (int t = 0; t < M.rows(); ++t) v.segment(t * M.cols(), M.cols()) = M.row(t).transpose();
  return v;
}

Mat unstack_rows(const Vec& v, int rows, int cols) {
  Mat M(rows, cols);
  for (int t = 0; t < rows; ++t) M.row(t) = v.segment(t * cols, cols).transpose();
  return M;
}

double comp_violation(const Vec& w, const Vec& s) {
  double v = 0.0;
  for (int i = 0; i < w.size(); ++i) v = std::max(v, std::abs(w(i) * s(i)));
  return v;
}

/// Feasible point with exact complementarity: simulate the LC model.
Vec simulated_point(const MpccProblem& p, const Condensed& k, const Vec& U) {
  const Mat u_traj = unstack_rows(U, p.T, p.m());
  const auto [X, W] = simulate_horizon(p, u_traj);
  (void)X;
  Vec z(k.N);
  z.head(k.nu) = U;
  z.tail(k.nw) = stack_rows(W);
  return z;
}

struct StageOutcome {
  Vec z;
  int iterations{0};
  bool converged{false};
};

/// SQP on  min J(z)  s.t. box, w ≥ 0, s ≥ 0, w_i s_i ≤ τ, with an ℓ∞
/// elastic variable on the bilinear rows and a proximal Hessian term.
StageOutcome sqp_stage(const MpccProblem& p, const Condensed& k, Vec z, double tau, int max_iter,
                       double& penalty) {
  const int N = k.N, nu = k.nu, nw = k.nw;
  const double rho = 1e-3 * std::max(1.0, k.H.diagonal().cwiseAbs().maxCoeff());
  Vec lo(nu), hi(nu);
  for (int t = 0; t < p.T; ++t) {
    lo.segment(t * k.m, k.m) = p.u_lo;
    hi.segment(t * k.m, k.m) = p.u_hi;
  }

  const int rows = 2 * nu + 3 * nw + 1;
  Mat Hq = Mat::Zero(N + 1, N + 1);
  Hq.topLeftCorner(N, N) = k.H;
  Hq.diagonal().array() += rho;

  auto violation = [&](const Vec& zz) {
    const Vec s = k.slack(zz);
    double v = 0.0;
    for (int i = 0; i < nw; ++i) v = std::max(v, zz(nu + i) * s(i) - tau);
    return v;
  };

  StageOutcome out;
  for (int it = 0; it < max_iter; ++it) {
    out.iterations = it + 1;
    const Vec grad = k.H * z + k.g;
    const Vec s = k.slack(z);
    const Vec w = z.tail(nw);

    Mat Ain = Mat::Zero(rows, N + 1);
    Vec bin(rows);
    int r = 0;
    for (int i = 0; i < nu; ++i) {
      Ain(r, i) = 1.0;
      bin(r++) = hi(i) - z(i);
      Ain(r, i) = -1.0;
      bin(r++) = z(i) - lo(i);
    }
    for (int i = 0; i < nw; ++i) {
      Ain(r, nu + i) = -1.0;
      bin(r++) = w(i);
    }
    for (int i = 0; i < nw; ++i) {
      Ain.row(r).head(N) = -k.S.row(i);
      bin(r++) = s(i);
    }
    const int bil0 = r;
    for (int i = 0; i < nw; ++i) {
      Ain.row(r).head(N) = w(i) * k.S.row(i);
      Ain(r, nu + i) += s(i);
      Ain(r, N) = -1.0;
      bin(r++) = tau - w(i) * s(i);
    }
    Ain(r, N) = -1.0;
    bin(r++) = 0.0;

    Vec gq(N + 1);
    gq.head(N) = grad;
    gq(N) = penalty;
    const auto res = qp::solve_dense_qp(Hq, gq, Mat(0, N + 1), Vec(0), Ain, bin);
    if (res.status != qp::QpStatus::Optimal) break;
    const Vec d = res.z.head(N);
    const double t_el = std::max(res.z(N), 0.0);

    const double lam_sum = res.lambda.segment(bil0, nw).sum();
    if (lam_sum > 0.5 * penalty) penalty = 2.0 * lam_sum + 1.0;

    if (d.cwiseAbs().maxCoeff() <= 1e-11 * (1.0 + z.cwiseAbs().maxCoeff())) {
      out.converged = true;
      break;
    }
    const double v0 = violation(z);
    const double merit0 = k.cost(z) + penalty * std::max(v0, 0.0);
    const double slope = grad.dot(d) + penalty * (t_el - std::max(v0, 0.0));
    double alpha = 1.0;
    bool accepted = false;
    while (alpha > 1e-10) {
      const Vec trial = z + alpha * d;
      const double merit = k.cost(trial) + penalty * std::max(violation(trial), 0.0);
      if (merit <= merit0 + 1e-4 * alpha * std::min(slope, 0.0)) {
        z = trial;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted) {
      out.converged = true;  // no descent left at this proximal scale
      break;
    }
  }
  // Rounding can leave iterates a hair outside the linear constraints.
  for (int i = 0; i < nu; ++i) z(i) = std::clamp(z(i), lo(i), hi(i));
  for (int i = 0; i < nw; ++i) z(nu + i) = std::max(z(nu + i), 0.0);
  out.z = std::move(z);
  return out;
}

enum class Branch { W, S };  // W: w_i = 0, s_i ≥ 0.  S: s_i = 0, w_i ≥ 0.

struct BranchSolve {
  bool ok{false};
  Vec z;
  Vec gamma, mu, kappa_lo, kappa_hi;
};

/// Convex QP of one complementarity branch. Solved by proximal iterations
/// (H may be singular in w), then refined on the identified active set.
BranchSolve solve_branch(const MpccProblem& p, const Condensed& k, const std::vector<Branch>& br,
                         Vec z) {
  const int N = k.N, nu = k.nu, nw = k.nw;
  Vec lo(nu), hi(nu);
  for (int t = 0; t < p.T; ++t) {
    lo.segment(t * k.m, k.m) = p.u_lo;
    hi.segment(t * k.m, k.m) = p.u_hi;
  }
  Mat Aeq = Mat::Zero(nw, N);
  Vec beq = Vec::Zero(nw);
  Mat Ain = Mat::Zero(2 * nu + nw, N);
  Vec bin(2 * nu + nw);
  for (int i = 0; i < nu; ++i) {
    Ain(2 * i, i) = 1.0;
    bin(2 * i) = hi(i);
    Ain(2 * i + 1, i) = -1.0;
    bin(2 * i + 1) = -lo(i);
  }
  for (int i = 0; i < nw; ++i) {
    const int r = 2 * nu + i;
    if (br[i] == Branch::W) {
      Aeq(i, nu + i) = 1.0;
      Ain.row(r) = -k.S.row(i);
      bin(r) = k.s0(i);
    } else {
      Aeq.row(i) = k.S.row(i);
      beq(i) = -k.s0(i);
      Ain(r, nu + i) = -1.0;
      bin(r) = 0.0;
    }
  }

  const double rho = 1e-6 * std::max(1.0, k.H.diagonal().cwiseAbs().maxCoeff());
  Mat Hp = k.H;
  Hp.diagonal().array() += rho;
  qp::DenseQpOptions qo;
  qo.tol = 1e-13;
  qp::DenseQpResult res;
  bool have = false;
  for (int it = 0; it < 300; ++it) {
    res = qp::solve_dense_qp(Hp, k.g - rho * z, Aeq, beq, Ain, bin, qo);
    if (res.status != qp::QpStatus::Optimal) return {};
    have = true;
    const double step = (res.z - z).cwiseAbs().maxCoeff();
    z = res.z;
    if (step <= 1e-13 * (1.0 + z.cwiseAbs().maxCoeff())) break;
  }
  if (!have) return {};

  // Active-set refinement: equality-constrained KKT with the active rows.
  Vec lambda = res.lambda;
  Vec mu_eq = res.mu_eq;
  {
    std::vector<int> act = res.active;
    const int ne = nw + static_cast<int>(act.size());
    Mat K = Mat::Zero(N + ne, N + ne);
    Vec rhs = Vec::Zero(N + ne);
    K.topLeftCorner(N, N) = k.H;
    rhs.head(N) = -k.g;
    for (int i = 0; i < nw; ++i) {
      K.block(N + i, 0, 1, N) = Aeq.row(i);
      K.block(0, N + i, N, 1) = Aeq.row(i).transpose();
      rhs(N + i) = beq(i);
    }
    for (std::size_t a = 0; a < act.size(); ++a) {
      const int row = N + nw + static_cast<int>(a);
      K.block(row, 0, 1, N) = Ain.row(act[a]);
      K.block(0, row, N, 1) = Ain.row(act[a]).transpose();
      rhs(row) = bin(act[a]);
    }
    const Vec sol = K.completeOrthogonalDecomposition().solve(rhs);
    const Vec zr = sol.head(N);
    Vec lam_r = Vec::Zero(lambda.size());
    for (std::size_t a = 0; a < act.size(); ++a) lam_r(act[a]) = sol(N + nw + static_cast<int>(a));
    const double scale = 1.0 + zr.cwiseAbs().maxCoeff();
    const bool primal_ok = (Ain * zr - bin).maxCoeff() <= 1e-11 * scale &&
                           (nw == 0 || (Aeq * zr - beq).cwiseAbs().maxCoeff() <= 1e-11 * scale);
    const bool dual_ok = lam_r.size() == 0 || lam_r.minCoeff() >= -1e-10 * (1.0 + lam_r.cwiseAbs().maxCoeff());
    const double obj_r = k.cost(zr), obj_p = k.cost(z);
    if (primal_ok && dual_ok && zr.allFinite() && obj_r <= obj_p + 1e-12 * (1.0 + std::abs(obj_p))) {
      z = zr;
      lambda = lam_r.cwiseMax(0.0);
      mu_eq = sol.segment(N, nw);
    }
  }

  BranchSolve out;
  out.ok = true;
  out.z = z;
  out.gamma = Vec::Zero(nw);
  out.mu = Vec::Zero(nw);
  out.kappa_lo = Vec::Zero(nu);
  out.kappa_hi = Vec::Zero(nu);
  for (int i = 0; i < nu; ++i) {
    out.kappa_hi(i) = lambda(2 * i);
    out.kappa_lo(i) = lambda(2 * i + 1);
  }
  // Stationarity reads H z + g + Aeqᵀ mu_eq + Ainᵀ λ = 0 while the MPCC
  // Lagrangian carries −γᵀw − μᵀs.
  for (int i = 0; i < nw; ++i) {
    const double lam = lambda(2 * nu + i);
    if (br[i] == Branch::W) {
      out.gamma(i) = -mu_eq(i);
      out.mu(i) = lam;
    } else {
      out.mu(i) = -mu_eq(i);
      out.gamma(i) = lam;
    }
  }
  return out;
}

}  // namespace

void CostSpec::validate(int n, int m, int T) const {
  require_arg(T >= 1, "horizon T must be >= 1");
  check_psd(Q, n, "Q");
  check_psd(R, m, "R");
  check_psd(R_delta, m, "R_delta");
  if (Q_T.size() > 0) check_psd(Q_T, n, "Q_T");
  require_dims(reference.rows() == n && reference.cols() == T, "reference must be n×T");
  require_arg(reference.allFinite(), "reference has non-finite entries");
}

MpccProblem build_mpcc(LCModel lc, CostSpec cost, Vec x0, int T, Vec u_lo, Vec u_hi, Vec u_prev) {
  lc.validate();
  require_arg(T >= 1, "horizon T must be >= 1");
  require_arg(lc.m() >= 1, "the LC model needs at least one input");
  cost.validate(lc.n(), lc.m(), T);
  require_dims(x0.size() == lc.n(), "x0 has " + std::to_string(x0.size()) + " entries, LC model has n = " +
                                        std::to_string(lc.n()));
  require_dims(u_lo.size() == lc.m() && u_hi.size() == lc.m(), "input bounds must have m entries");
  require_arg((u_lo.array() <= u_hi.array()).all(), "input bounds must satisfy u_lo <= u_hi");
  if (u_prev.size() == 0) u_prev = Vec::Zero(lc.m());
  require_dims(u_prev.size() == lc.m(), "u_prev must have m entries");
  MpccProblem p;
  p.lc = std::move(lc);
  p.T = T;
  p.x0 = std::move(x0);
  p.cost = std::move(cost);
  p.u_lo = std::move(u_lo);
  p.u_hi = std::move(u_hi);
  p.u_prev = std::move(u_prev);
  return p;
}

const char* to_string(MpccStatus status) {
  switch (status) {
    case MpccStatus::Stationary: return "stationary";
    case MpccStatus::Feasible: return "feasible";
    case MpccStatus::Failed: return "failed";
  }
  return "unknown";
}

std::pair<Mat, Mat> simulate_horizon(const MpccProblem& p, const Mat& u_traj) {
  require_dims(u_traj.rows() == p.T && u_traj.cols() == p.m(), "u_traj must be T×m");
  const LcStepper stepper(p.lc);
  Mat X(p.T + 1, p.n()), W(p.T, p.l());
  X.row(0) = p.x0.transpose();
  for (int t = 0; t < p.T; ++t) {
    const auto st = stepper.step(X.row(t).transpose(), u_traj.row(t).transpose());
    X.row(t + 1) = st.x_next.transpose();
    W.row(t) = st.w.transpose();
  }
  return {X, W};
}

double horizon_cost(const MpccProblem& p, const Mat& x_traj, const Mat& u_traj) {
  require_dims(x_traj.rows() == p.T + 1 && x_traj.cols() == p.n(), "x_traj must be (T+1)×n");
  require_dims(u_traj.rows() == p.T && u_traj.cols() == p.m(), "u_traj must be T×m");
  const auto& c = p.cost;
  double J = 0.0;
  Vec u_last = p.u_prev;
  for (int t = 0; t < p.T; ++t) {
    const Vec e = x_traj.row(t + 1).transpose() - c.reference.col(t);
    const Vec u = u_traj.row(t).transpose();
    const Vec du = u - u_last;
    J += e.dot(c.Q * e) + u.dot(c.R * u) + du.dot(c.R_delta * du);
    u_last = u;
  }
  if (c.Q_T.size() > 0) {
    const Vec e = x_traj.row(p.T).transpose() - c.reference.col(p.T - 1);
    J += e.dot(c.Q_T * e);
  }
  return J;
}

namespace {

MpccSolution solve_from(const MpccProblem& p, const Condensed& k, const Mat& u0,
                        const MpccOptions& opts) {
  const int nu = k.nu, nw = k.nw, T = p.T, m = p.m(), l = p.l(), n = p.n();
  MpccSolution sol;
  Vec z;
  try {
    z = simulated_point(p, k, stack_rows(u0));
  } catch (const Error& e) {
    throw Error(ErrorCode::Infeasible, std::string("no feasible starting point from x0: ") + e.what());
  }

  // Relaxation path.
  if (l > 0) {
    double penalty = 10.0;
    double last_cv = std::numeric_limits<double>::infinity();
    for (double tau : opts.taus) {
      auto st = sqp_stage(p, k, z, tau, opts.max_sqp_iter, penalty);
      StageInfo info;
      info.tau = tau;
      info.iterations = st.iterations;
      info.converged = st.converged;
      const double cv = comp_violation(st.z.tail(nw), k.slack(st.z));
      const bool slack_ok = k.slack(st.z).minCoeff() >= -1e-9 * (1.0 + k.s0.cwiseAbs().maxCoeff());
      if (cv <= last_cv && slack_ok) {
        z = st.z;
        last_cv = cv;
      } else {
        info.kept_previous = true;
      }
      info.comp_violation = last_cv;
      info.objective = k.cost(z);
      sol.stages.push_back(info);
    }
  }

  // Polish on one branch, starting from an exactly complementary point.
  Vec U = z.head(nu);
  for (int i = 0; i < nu; ++i) U(i) = std::clamp(U(i), p.u_lo(i % m), p.u_hi(i % m));
  Vec zc = simulated_point(p, k, U);
  std::vector<Branch> br(nw, Branch::W);
  {
    const Vec s = k.slack(zc);
    for (int i = 0; i < nw; ++i) br[i] = zc(nu + i) > s(i) ? Branch::S : Branch::W;
  }
  BranchSolve bs;
  int rounds = 0;
  for (; rounds < std::max(1, opts.max_polish_rounds); ++rounds) {
    bs = solve_branch(p, k, br, zc);
    if (!bs.ok) break;
    zc = bs.z;
    const Vec s = k.slack(zc);
    const double act = 1e-9 * (1.0 + zc.cwiseAbs().maxCoeff());
    if (nw == 0) break;
    const double mtol = 1e-9 * (1.0 + std::max(bs.gamma.cwiseAbs().maxCoeff(), bs.mu.cwiseAbs().maxCoeff()));
    int flips = 0;
    for (int i = 0; i < nw; ++i) {
      const bool biactive = zc(nu + i) <= act && s(i) <= act;
      if (!biactive) continue;
      if (br[i] == Branch::W && bs.gamma(i) < -mtol) {
        br[i] = Branch::S;
        ++flips;
      } else if (br[i] == Branch::S && bs.mu(i) < -mtol) {
        br[i] = Branch::W;
        ++flips;
      }
    }
    sol.branch_flips += flips;
    if (flips == 0) break;
  }
  if (!bs.ok) {
    sol.status = MpccStatus::Failed;
    sol.diagnostic = "branch QP failed after " + std::to_string(rounds) + " polish rounds";
    zc = simulated_point(p, k, U);
    bs.gamma = bs.mu = Vec::Zero(nw);
    bs.kappa_lo = bs.kappa_hi = Vec::Zero(nu);
  }

  // Assemble trajectories and multipliers.
  const Vec X = k.Xc + k.Xz * zc;
  sol.x_traj.resize(T + 1, n);
  sol.x_traj.row(0) = p.x0.transpose();
  for (int t = 0; t < T; ++t) sol.x_traj.row(t + 1) = X.segment(t * n, n).transpose();
  sol.u_traj = unstack_rows(zc.head(nu), T, m);
  sol.w_traj = unstack_rows(zc.tail(nw), T, l);
  sol.gamma = unstack_rows(bs.gamma, T, l);
  sol.mu = unstack_rows(bs.mu, T, l);
  sol.kappa_lo = unstack_rows(bs.kappa_lo, T, m);
  sol.kappa_hi = unstack_rows(bs.kappa_hi, T, m);
  // Dynamics multipliers by the adjoint recursion
  //   ν_{T−1} = −∂J/∂x_T,  ν_{t−1} = −∂J/∂x_t + Aᵀν_t + E_xᵀμ_t.
  sol.nu.resize(T, n);
  const auto& c = p.cost;
  auto dJdx = [&](int t) {  // t = 1..T
    const Vec e = sol.x_traj.row(t).transpose() - c.reference.col(t - 1);
    Vec gdx = 2.0 * c.Q * e;
    if (t == T && c.Q_T.size() > 0) gdx += 2.0 * c.Q_T * e;
    return gdx;
  };
  Vec nu_t = -dJdx(T);
  sol.nu.row(T - 1) = nu_t.transpose();
  for (int t = T - 1; t >= 1; --t) {
    nu_t = -dJdx(t) + p.lc.A.transpose() * nu_t;
    if (l > 0) nu_t += p.lc.E_x.transpose() * sol.mu.row(t).transpose();
    sol.nu.row(t - 1) = nu_t.transpose();
  }

  sol.objective = k.cost(zc);
  const Vec s = k.slack(zc);
  sol.comp_violation = nw > 0 ? comp_violation(zc.tail(nw), s) : 0.0;

  // Condensed KKT residual of the exact problem.
  Vec stat = k.H * zc + k.g;
  stat.head(nu) += bs.kappa_hi - bs.kappa_lo;
  if (nw > 0) {
    stat.tail(nw) -= bs.gamma;
    stat -= k.S.transpose() * bs.mu;
  }
  double res = stat.cwiseAbs().maxCoeff();
  if (nw > 0) {
    res = std::max(res, (-zc.tail(nw)).maxCoeff());
    res = std::max(res, (-s).maxCoeff());
    for (int i = 0; i < nw; ++i) {
      res = std::max(res, std::abs(bs.gamma(i) * zc(nu + i)));
      res = std::max(res, std::abs(bs.mu(i) * s(i)));
      if (zc(nu + i) <= 1e-9 && s(i) <= 1e-9)
        res = std::max({res, -bs.gamma(i), -bs.mu(i)});
    }
  }
  for (int i = 0; i < nu; ++i) {
    res = std::max({res, -bs.kappa_lo(i), -bs.kappa_hi(i)});
    res = std::max(res, std::abs(bs.kappa_hi(i) * (p.u_hi(i % m) - zc(i))));
    res = std::max(res, std::abs(bs.kappa_lo(i) * (zc(i) - p.u_lo(i % m))));
  }
  sol.kkt_residual = res;
  if (bs.ok) {
    if (res <= opts.tol && sol.comp_violation <= opts.comp_tol) {
      sol.status = MpccStatus::Stationary;
    } else {
      sol.status = MpccStatus::Failed;
      sol.diagnostic = "KKT residual " + std::to_string(res) + ", complementarity " +
                       std::to_string(sol.comp_violation) + " after " + std::to_string(rounds + 1) +
                       " polish rounds";
    }
  }
  return sol;
}

}  // namespace

MpccSolution solve_mpcc(const MpccProblem& p, const MpccOptions& opts) {
  require_arg(p.x0.allFinite(), "x0 has non-finite entries");
  const Condensed k = condense(p);
  const int T = p.T, m = p.m();

  auto clamp_rows = [&](Mat u) {
    for (int t = 0; t < T; ++t) u.row(t) = u.row(t).transpose().cwiseMax(p.u_lo).cwiseMin(p.u_hi).transpose();
    return u;
  };
  std::vector<Mat> starts;
  if (opts.u_init) {
    require_dims(opts.u_init->rows() == T && opts.u_init->cols() == m, "u_init must be T×m");
    starts.push_back(clamp_rows(*opts.u_init));
  } else {
    starts.push_back(clamp_rows(p.u_prev.transpose().replicate(T, 1)));
  }
  // Constant input sequences spread over the box.
  if (p.l() > 0)
    for (int i = 0; i < opts.multistart_levels; ++i) {
      const double f = opts.multistart_levels == 1 ? 0.5 : double(i) / (opts.multistart_levels - 1);
      const Vec u = p.u_lo + f * (p.u_hi - p.u_lo);
      starts.push_back(u.transpose().replicate(T, 1));
    }

  // Coarse global search over the input box.
  if (p.l() > 0 && opts.seed_evaluations > 0) {
    DirectOptions d;
    d.max_evaluations = opts.seed_evaluations;
    starts.push_back(baseline_solver(p, d).u_traj);
  }

  MpccSolution best;
  bool have = false;
  // Each start is followed along the relaxation path and also polished
  // directly, since the path can leave a good start's basin.
  MpccOptions direct_opts = opts;
  direct_opts.taus.clear();
  std::vector<std::pair<const Mat*, const MpccOptions*>> runs;
  for (const auto& u0 : starts) {
    runs.emplace_back(&u0, &opts);
    if (p.l() > 0) runs.emplace_back(&u0, &direct_opts);
  }
  std::vector<StageInfo> primary_path;
  for (const auto& [u0, o] : runs) {
    auto sol = solve_from(p, k, *u0, *o);
    if (u0 == &starts.front() && o == &opts) primary_path = sol.stages;
    const bool better =
        !have || (sol.status == MpccStatus::Stationary &&
                  (best.status != MpccStatus::Stationary || sol.objective < best.objective - 1e-12));
    if (better) {
      best = std::move(sol);
      have = true;
    }
  }
  // Stages always describe the path from the primary start.
  best.stages = primary_path;
  return best;
}

}  // namespace hybridid
