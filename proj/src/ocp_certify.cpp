// Full-space KKT evaluation, kept separate from the condensed solver on purpose:
// nothing here reuses the solver's elimination of x.

#include <algorithm>
#include <cmath>

#include "hybridid/ocp.hpp"

namespace hybridid {

Certificate certify_stationarity(const MpccProblem& p, const MpccSolution& sol, double tol) {
  const int T = p.T, n = p.n(), m = p.m(), l = p.l();
  require_dims(sol.x_traj.rows() == T + 1 && sol.x_traj.cols() == n, "x_traj must be (T+1)×n");
  require_dims(sol.u_traj.rows() == T && sol.u_traj.cols() == m, "u_traj must be T×m");
  require_dims(sol.w_traj.rows() == T && sol.w_traj.cols() == l, "w_traj must be T×l");
  require_dims(sol.nu.rows() == T && sol.nu.cols() == n, "nu must be T×n");
  require_dims(sol.gamma.rows() == T && sol.gamma.cols() == l && sol.mu.rows() == T &&
                   sol.mu.cols() == l,
               "gamma/mu must be T×l");
  require_dims(sol.kappa_lo.rows() == T && sol.kappa_lo.cols() == m && sol.kappa_hi.rows() == T &&
                   sol.kappa_hi.cols() == m,
               "kappa must be T×m");
  const auto& lc = p.lc;
  const auto& c = p.cost;

  auto x = [&](int t) -> Vec { return sol.x_traj.row(t).transpose(); };
  auto u = [&](int t) -> Vec { return sol.u_traj.row(t).transpose(); };
  auto w = [&](int t) -> Vec { return sol.w_traj.row(t).transpose(); };
  auto s = [&](int t) -> Vec { return lc.E_w * w(t) + lc.E_x * x(t) + lc.E_u * u(t) + lc.e; };

  // Primal feasibility.
  double dyn = (x(0) - p.x0).cwiseAbs().maxCoeff();
  double infeas = 0.0;
  for (int t = 0; t < T; ++t) {
    const Vec r = x(t + 1) - (lc.A * x(t) + lc.B_u * u(t) + lc.B_w * w(t) + lc.d);
    dyn = std::max(dyn, r.cwiseAbs().maxCoeff());
    infeas = std::max(infeas, (p.u_lo - u(t)).maxCoeff());
    infeas = std::max(infeas, (u(t) - p.u_hi).maxCoeff());
    if (l > 0) {
      infeas = std::max(infeas, (-w(t)).maxCoeff());
      infeas = std::max(infeas, (-s(t)).maxCoeff());
    }
  }
  if (std::max(dyn, infeas) > 1e-6)
    throw Error(ErrorCode::Infeasible, "solution violates the constraints by " +
                                           std::to_string(std::max(dyn, infeas)));

  // ∇L with L = J + Σ ν_tᵀ(x_{t+1} − A x_t − B_u u_t − B_w w_t − d)
  //             − Σ γ_tᵀ w_t − Σ μ_tᵀ s_t + Σ κhi_tᵀ(u_t − u_hi) + κlo_tᵀ(u_lo − u_t).
  double stat = 0.0;
  for (int t = 1; t <= T; ++t) {
    const Vec e = x(t) - c.reference.col(t - 1);
    Vec g = 2.0 * c.Q * e;
    if (t == T && c.Q_T.size() > 0) g += 2.0 * c.Q_T * e;
    g += sol.nu.row(t - 1).transpose();
    if (t < T) {
      g -= lc.A.transpose() * sol.nu.row(t).transpose();
      if (l > 0) g -= lc.E_x.transpose() * sol.mu.row(t).transpose();
    }
    stat = std::max(stat, g.cwiseAbs().maxCoeff());
  }
  for (int t = 0; t < T; ++t) {
    const Vec du_prev = u(t) - (t == 0 ? p.u_prev : u(t - 1));
    Vec g = 2.0 * c.R * u(t) + 2.0 * c.R_delta * du_prev;
    if (t + 1 < T) g -= 2.0 * c.R_delta * (u(t + 1) - u(t));
    g -= lc.B_u.transpose() * sol.nu.row(t).transpose();
    if (l > 0) g -= lc.E_u.transpose() * sol.mu.row(t).transpose();
    g += sol.kappa_hi.row(t).transpose() - sol.kappa_lo.row(t).transpose();
    stat = std::max(stat, g.cwiseAbs().maxCoeff());
    if (l > 0) {
      const Vec gw = -lc.B_w.transpose() * sol.nu.row(t).transpose() - sol.gamma.row(t).transpose() -
                     lc.E_w.transpose() * sol.mu.row(t).transpose();
      stat = std::max(stat, gw.cwiseAbs().maxCoeff());
    }
  }

  // Complementarity, multiplier complementarity and signs. A pair counts as
  // biactive when both w_i and s_i vanish; only there must γ_i, μ_i be ≥ 0.
  double comp = 0.0, signs = 0.0;
  constexpr double kActive = 1e-7;
  for (int t = 0; t < T; ++t) {
    const Vec wt = w(t), st = s(t);
    for (int i = 0; i < l; ++i) {
      comp = std::max(comp, std::abs(wt(i) * st(i)));
      const double g = sol.gamma(t, i), mu = sol.mu(t, i);
      signs = std::max(signs, std::abs(g * wt(i)));
      signs = std::max(signs, std::abs(mu * st(i)));
      if (wt(i) <= kActive && st(i) <= kActive) signs = std::max({signs, -g, -mu});
    }
    for (int j = 0; j < m; ++j) {
      const double klo = sol.kappa_lo(t, j), khi = sol.kappa_hi(t, j);
      signs = std::max({signs, -klo, -khi});
      signs = std::max(signs, std::abs(klo * (u(t)(j) - p.u_lo(j))));
      signs = std::max(signs, std::abs(khi * (p.u_hi(j) - u(t)(j))));
    }
  }

  Certificate cert;
  cert.stationarity = stat;
  cert.feasibility = std::max(dyn, std::max(infeas, 0.0));
  cert.complementarity = comp;
  cert.multiplier_signs = signs;
  cert.residual = std::max({stat, cert.feasibility, comp, signs});
  if (!(cert.residual <= tol)) {
    cert.pass = false;
    cert.reason = "KKT residual " + std::to_string(cert.residual) + " exceeds tolerance";
  } else if (!p.conditions || !p.conditions->all_hold() || !lc.strict_lower_bounds) {
    cert.pass = false;
    cert.reason = "conditions unverified";
  } else {
    cert.pass = true;
  }
  return cert;
}

}  // namespace hybridid
