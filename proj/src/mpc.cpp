#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>

#include "hybridid/ocp.hpp"
#include "hybridid/qp.hpp"

namespace hybridid {

namespace {

struct Rect {
  Vec center;             // unit-cube coordinates
  std::vector<int> level; // side along j is 3^(−level[j])
  double f;
  int min_level() const { return *std::min_element(level.begin(), level.end()); }
};

Vec flatten(const Mat& u_traj) {
  Vec v(u_traj.size());
  for (int t = 0; t < u_traj.rows(); ++t)
    v.segment(t * u_traj.cols(), u_traj.cols()) = u_traj.row(t).transpose();
  return v;
}

Mat unflatten(const Vec& v, int T, int m) {
  Mat M(T, m);
  for (int t = 0; t < T; ++t) M.row(t) = v.segment(t * m, m).transpose();
  return M;
}

/// States (T+1)×n under the closed-form model, or the LC model without one.
Mat rollout(const MpccProblem& p, const Mat& u_traj) {
  if (!p.model) return simulate_horizon(p, u_traj).first;
  Mat X(p.T + 1, p.n());
  X.row(0) = p.x0.transpose();
  for (int t = 0; t < p.T; ++t)
    X.row(t + 1) = predict(*p.model, X.row(t).transpose(), u_traj.row(t).transpose()).transpose();
  return X;
}

Mat box_clamped(Mat u_traj, const Vec& lo, const Vec& hi) {
  for (int t = 0; t < u_traj.rows(); ++t)
    u_traj.row(t) = u_traj.row(t).transpose().cwiseMax(lo).cwiseMin(hi).transpose();
  return u_traj;
}

void fill_trajectories(const MpccProblem& p, MpccSolution& sol, const Mat& u_traj) {
  sol.u_traj = u_traj;
  sol.x_traj = rollout(p, u_traj);
  sol.w_traj = p.l() > 0 ? simulate_horizon(p, u_traj).second : Mat(p.T, 0);
  sol.objective = horizon_cost(p, sol.x_traj, u_traj);
  sol.nu = Mat::Zero(p.T, p.n());
  sol.gamma = sol.mu = Mat::Zero(p.T, p.l());
  sol.kappa_lo = sol.kappa_hi = Mat::Zero(p.T, p.m());
  sol.comp_violation = 0.0;
}

}  // namespace

DirectResult direct_l(const std::function<double(const Vec&)>& f, const Vec& lo, const Vec& hi,
                      const DirectOptions& opts) {
  const int D = static_cast<int>(lo.size());
  require_dims(hi.size() == D && D >= 1, "DIRECT bounds");
  require_arg((lo.array() <= hi.array()).all(), "DIRECT bounds must satisfy lo <= hi");
  require_arg(opts.max_evaluations >= 1, "DIRECT budget must be >= 1");
  auto to_box = [&](const Vec& c) -> Vec { return lo + (hi - lo).cwiseProduct(c); };

  DirectResult best;
  std::vector<Rect> rects;
  auto eval = [&](const Vec& c) {
    const Vec x = to_box(c);
    const double v = f(x);
    ++best.evaluations;
    if (best.evaluations == 1 || v < best.f) {
      best.f = v;
      best.x = x;
    }
    return v;
  };
  rects.push_back({Vec::Constant(D, 0.5), std::vector<int>(D, 0), 0.0});
  rects[0].f = eval(rects[0].center);

  while (best.evaluations < opts.max_evaluations) {
    // Best rectangle per size class (ties to the lowest index).
    std::map<int, int> best_of;  // min level -> rect index; larger level = smaller rect
    for (int i = 0; i < static_cast<int>(rects.size()); ++i) {
      const int lv = rects[i].min_level();
      auto it = best_of.find(lv);
      if (it == best_of.end() || rects[i].f < rects[it->second].f) best_of[lv] = i;
    }
    std::vector<std::pair<double, int>> cls;  // (size, index), size ascending
    for (auto it = best_of.rbegin(); it != best_of.rend(); ++it)
      cls.emplace_back(std::pow(3.0, -it->first), it->second);

    const double fmin = best.f;
    std::vector<int> chosen;
    for (std::size_t a = 0; a < cls.size(); ++a) {
      const double sa = cls[a].first, fa = rects[cls[a].second].f;
      double k_lo = 0.0, k_hi = std::numeric_limits<double>::infinity();
      bool ok = true;
      for (std::size_t b = 0; b < cls.size() && ok; ++b) {
        if (b == a) continue;
        const double sb = cls[b].first, fb = rects[cls[b].second].f;
        if (sb < sa) k_lo = std::max(k_lo, (fa - fb) / (sa - sb));
        else k_hi = std::min(k_hi, (fb - fa) / (sb - sa));
      }
      if (k_lo > k_hi) ok = false;
      if (ok && std::isfinite(k_hi) && fa - k_hi * sa > fmin - opts.epsilon * std::abs(fmin))
        ok = false;
      if (ok) chosen.push_back(cls[a].second);
    }
    if (chosen.empty()) chosen.push_back(cls.back().second);

    bool progressed = false;
    for (int idx : chosen) {
      const int lv = rects[idx].min_level();
      std::vector<int> dims;
      for (int j = 0; j < D; ++j)
        if (rects[idx].level[j] == lv) dims.push_back(j);
      if (best.evaluations + 2 * static_cast<int>(dims.size()) > opts.max_evaluations) continue;
      if (lv >= 30) continue;  // below double resolution
      const double delta = std::pow(3.0, -(lv + 1));
      std::vector<std::pair<double, int>> order;
      std::vector<double> f_plus(D), f_minus(D);
      for (int j : dims) {
        Vec cp = rects[idx].center, cm = rects[idx].center;
        cp(j) += delta;
        cm(j) -= delta;
        f_plus[j] = eval(cp);
        f_minus[j] = eval(cm);
        order.emplace_back(std::min(f_plus[j], f_minus[j]), j);
      }
      std::stable_sort(order.begin(), order.end(),
                       [](const auto& x, const auto& y) { return x.first < y.first; });
      std::vector<int> level = rects[idx].level;
      const Vec center = rects[idx].center;
      for (const auto& [unused, j] : order) {
        (void)unused;
        ++level[j];
        Vec cp = center, cm = center;
        cp(j) += delta;
        cm(j) -= delta;
        rects.push_back({cp, level, f_plus[j]});
        rects.push_back({cm, level, f_minus[j]});
      }
      rects[idx].level = level;
      progressed = true;
    }
    if (!progressed) break;
  }
  return best;
}

MpccSolution baseline_solver(const MpccProblem& p, const DirectOptions& opts) {
  const int T = p.T, m = p.m();
  Vec lo(T * m), hi(T * m);
  for (int t = 0; t < T; ++t) {
    lo.segment(t * m, m) = p.u_lo;
    hi.segment(t * m, m) = p.u_hi;
  }
  auto objective = [&](const Vec& U) {
    const Mat u_traj = unflatten(U, T, m);
    const Mat X = rollout(p, u_traj);
    if (!X.allFinite()) return std::numeric_limits<double>::infinity();
    return horizon_cost(p, X, u_traj);
  };
  const auto res = direct_l(objective, lo, hi, opts);
  MpccSolution sol;
  fill_trajectories(p, sol, unflatten(res.x, T, m));
  sol.evaluations = res.evaluations;
  sol.kkt_residual = std::numeric_limits<double>::quiet_NaN();
  sol.status = MpccStatus::Feasible;
  return sol;
}

MpccSolution solve_single_shooting(const MpccProblem& p, const ShootingOptions& opts) {
  require_arg(p.model.has_value(), "single shooting needs the closed-form model");
  const auto model = denormalized(*p.model);
  const int T = p.T, n = p.n(), m = p.m(), N = T * m;
  const auto& c = p.cost;

  Mat u_traj(T, m);
  if (opts.u_init) {
    require_dims(opts.u_init->rows() == T && opts.u_init->cols() == m, "u_init must be T×m");
    u_traj = *opts.u_init;
  } else {
    for (int t = 0; t < T; ++t) u_traj.row(t) = p.u_prev.transpose();
  }
  u_traj = box_clamped(u_traj, p.u_lo, p.u_hi);
  Vec U = flatten(u_traj);
  Vec lo(N), hi(N);
  for (int t = 0; t < T; ++t) {
    lo.segment(t * m, m) = p.u_lo;
    hi.segment(t * m, m) = p.u_hi;
  }

  // Input part of the cost is an exact quadratic ½UᵀH_u U + g_uᵀU + const.
  Mat Hu = Mat::Zero(N, N);
  Vec gu = Vec::Zero(N);
  for (int t = 0; t < T; ++t) {
    Hu.block(t * m, t * m, m, m) += 2.0 * (c.R + c.R_delta);
    if (t > 0) {
      Hu.block((t - 1) * m, (t - 1) * m, m, m) += 2.0 * c.R_delta;
      Hu.block(t * m, (t - 1) * m, m, m) -= 2.0 * c.R_delta;
      Hu.block((t - 1) * m, t * m, m, m) -= 2.0 * c.R_delta;
    }
  }
  gu.head(m) = -2.0 * c.R_delta * p.u_prev;

  auto cost_of = [&](const Vec& Uv) {
    const Mat ut = unflatten(Uv, T, m);
    return horizon_cost(p, rollout(p, ut), ut);
  };

  MpccSolution sol;
  double J = cost_of(U);
  double proj_grad = std::numeric_limits<double>::infinity();
  int it = 0;
  for (; it < opts.max_iter; ++it) {
    // Rollout with sensitivities G_t = ∂x_t/∂U.
    Mat G = Mat::Zero(n, N);
    Vec x = p.x0;
    Mat Hs = Hu;
    Vec g = Hu * U + gu;
    for (int t = 0; t < T; ++t) {
      const Vec u = U.segment(t * m, m);
      const auto fw = forward(model, x, u);
      Mat Ax(n, n), Bu(n, m);
      for (int k = 0; k < n; ++k) {
        const int a = fw.active.alpha_active[k], b = fw.active.beta_active[k];
        const AffinePiece& pa = a == 0 ? model.psi() : model.alpha_pieces()[a - 1];
        const AffinePiece& pb = b == 0 ? model.phi() : model.beta_pieces()[b - 1];
        Ax.row(k) = pa.A.row(k) - pb.A.row(k);
        Bu.row(k) = pa.B.row(k) - pb.B.row(k);
      }
      Mat Gn = Ax * G;
      Gn.block(0, t * m, n, m) += Bu;
      x = fw.x_next;
      G = std::move(Gn);
      const Vec e = x - c.reference.col(t);
      Mat W = c.Q;
      if (t == T - 1 && c.Q_T.size() > 0) W += c.Q_T;
      Hs.noalias() += 2.0 * G.transpose() * W * G;
      g.noalias() += 2.0 * G.transpose() * (W * e);
    }
    // Projected gradient as the stationarity measure.
    proj_grad = 0.0;
    for (int i = 0; i < N; ++i) {
      const double step = std::clamp(U(i) - g(i), lo(i), hi(i)) - U(i);
      proj_grad = std::max(proj_grad, std::abs(step));
    }
    Hs = 0.5 * (Hs + Hs.transpose());
    Hs.diagonal().array() += 1e-9 * (1.0 + Hs.diagonal().cwiseAbs().maxCoeff());
    Mat Ain(2 * N, N);
    Ain << Mat::Identity(N, N), -Mat::Identity(N, N);
    Vec bin(2 * N);
    bin << hi - U, U - lo;
    const auto qpres = qp::solve_dense_qp(Hs, g, Mat(0, N), Vec(0), Ain, bin);
    if (qpres.status != qp::QpStatus::Optimal) break;
    const Vec d = qpres.z;
    if (d.cwiseAbs().maxCoeff() <= 1e-11 * (1.0 + U.cwiseAbs().maxCoeff())) break;
    const double slope = g.dot(d);
    double alpha = 1.0, Jt = J;
    bool accepted = false;
    while (alpha > 1e-12) {
      const Vec trial = (U + alpha * d).cwiseMax(lo).cwiseMin(hi);
      Jt = cost_of(trial);
      if (Jt <= J + 1e-4 * alpha * std::min(slope, 0.0)) {
        const double drop = J - Jt;
        U = trial;
        J = Jt;
        accepted = true;
        if (drop <= opts.tol * (1.0 + std::abs(J))) alpha = 0.0;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted || alpha == 0.0) break;
  }
  fill_trajectories(p, sol, unflatten(U, T, m));
  sol.kkt_residual = proj_grad;
  sol.status = proj_grad <= 1e-6 ? MpccStatus::Stationary : MpccStatus::Feasible;
  sol.diagnostic = std::to_string(it) + " Gauss-Newton iterations";
  return sol;
}

const char* to_string(MpcMode mode) {
  switch (mode) {
    case MpcMode::Mpcc: return "mpcc";
    case MpcMode::SingleShooting: return "shooting";
    case MpcMode::Baseline: return "direct";
  }
  return "unknown";
}

MpcMode parse_mpc_mode(const std::string& name) {
  if (name == "mpcc") return MpcMode::Mpcc;
  if (name == "shooting") return MpcMode::SingleShooting;
  if (name == "direct") return MpcMode::Baseline;
  throw Error(ErrorCode::InvalidArgument, "unknown MPC mode '" + name + "' (mpcc, shooting, direct)");
}

double MpcLog::median_solve_seconds() const {
  if (solve_seconds.size() == 0) return 0.0;
  std::vector<double> v(solve_seconds.data(), solve_seconds.data() + solve_seconds.size());
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

MpcLog mpc_run(const DiffMaxAffineModel& model, const Plant& plant, const Vec& x0,
               const MpcConfig& cfg) {
  require_arg(cfg.T >= 1 && cfg.steps >= 1, "MPC needs T >= 1 and steps >= 1");
  require_arg(cfg.T <= cfg.steps, "MPC horizon must not exceed the number of steps");
  require_dims(model.n() == plant.n && model.m() == plant.m, "model and plant dimensions differ");
  require_dims(x0.size() == plant.n, "x0 dimension");
  require_dims(cfg.reference.rows() == plant.n && cfg.reference.cols() >= cfg.steps + cfg.T,
               "reference must be n×(steps + T)");
  const int n = plant.n, m = plant.m, T = cfg.T;
  const auto phys = denormalized(model);
  const LCModel lc = extract_lc(phys);

  MpcLog log;
  log.X.resize(n, cfg.steps + 1);
  log.U.resize(m, cfg.steps);
  log.reference = cfg.reference.leftCols(cfg.steps + T);
  log.objective = Vec::Zero(cfg.steps);
  log.kkt_residual = Vec::Constant(cfg.steps, std::numeric_limits<double>::quiet_NaN());
  log.solve_seconds = Vec::Zero(cfg.steps);
  cfg.Q.diagonal().maxCoeff(&log.tracked_component);

  Vec u_last = cfg.u_init.size() ? cfg.u_init : Vec(0.5 * (cfg.u_lo + cfg.u_hi));
  log.u_before = u_last;
  Mat warm(T, m);
  for (int t = 0; t < T; ++t) warm.row(t) = u_last.transpose();
  Vec x = x0;
  log.X.col(0) = x;
  for (int k = 0; k < cfg.steps; ++k) {
    CostSpec cs{cfg.Q, cfg.R, cfg.R_delta, cfg.Q_T, cfg.reference.middleCols(k, T)};
    MpccSolution sol;
    bool ok = true;
    std::string why;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      auto problem = build_mpcc(lc, cs, x, T, cfg.u_lo, cfg.u_hi, u_last);
      problem.model = phys;
      switch (cfg.mode) {
        case MpcMode::Mpcc: {
          auto o = cfg.mpcc;
          o.u_init = warm;
          sol = solve_mpcc(problem, o);
          ok = sol.status == MpccStatus::Stationary;
          why = sol.diagnostic;
          break;
        }
        case MpcMode::SingleShooting: {
          auto o = cfg.shooting;
          o.u_init = warm;
          sol = solve_single_shooting(problem, o);
          ok = sol.status != MpccStatus::Failed;
          break;
        }
        case MpcMode::Baseline:
          sol = baseline_solver(problem, cfg.baseline);
          break;
      }
    } catch (const Error& e) {
      ok = false;
      why = e.what();
    }
    log.solve_seconds(k) =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    Vec u = u_last;
    if (ok) {
      u = sol.u_traj.row(0).transpose();
      log.objective(k) = sol.objective;
      if (cfg.mode == MpcMode::Mpcc) log.kkt_residual(k) = sol.kkt_residual;
      warm.topRows(T - 1) = sol.u_traj.bottomRows(T - 1);
      warm.row(T - 1) = sol.u_traj.row(T - 1);
    } else {
      log.objective(k) = std::numeric_limits<double>::quiet_NaN();
      log.events.push_back("step " + std::to_string(k) + ": " + to_string(cfg.mode) +
                           " solve failed (" + why + "); previous input applied");
    }
    x = plant.step(x, u);
    log.U.col(k) = u;
    log.X.col(k + 1) = x;
    u_last = u;
  }
  log.closed_loop_cost = closed_loop_cost(log, cfg.Q, cfg.R, cfg.R_delta);
  return log;
}

double closed_loop_cost(const MpcLog& log, const Mat& Q, const Mat& R, const Mat& R_delta) {
  double J = 0.0;
  Vec u_last = log.u_before;
  for (int k = 0; k < log.U.cols(); ++k) {
    const Vec e = log.X.col(k + 1) - log.reference.col(k);
    const Vec u = log.U.col(k);
    const Vec du = u - u_last;
    J += e.dot(Q * e) + u.dot(R * u) + du.dot(R_delta * du);
    u_last = u;
  }
  return J;
}

std::string mpc_log_csv(const MpcLog& log, bool with_timing) {
  auto num = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  std::string out = "step,time_s";
  for (int i = 0; i < log.X.rows(); ++i) out += ",x" + std::to_string(i + 1);
  for (int i = 0; i < log.U.rows(); ++i) out += ",u" + std::to_string(i + 1);
  out += ",r,objective,kkt_residual\n";
  for (int k = 0; k < log.U.cols(); ++k) {
    out += std::to_string(k) + "," + num(with_timing ? log.solve_seconds(k) : 0.0);
    for (int i = 0; i < log.X.rows(); ++i) out += "," + num(log.X(i, k));
    for (int i = 0; i < log.U.rows(); ++i) out += "," + num(log.U(i, k));
    out += "," + num(log.reference(log.tracked_component, k));
    out += "," + num(log.objective(k)) + "," + num(log.kkt_residual(k)) + "\n";
  }
  return out;
}

}  // namespace hybridid
