#pragma once

// OCP instances and the dense-QP reference for the pure-linear case.

#include <random>
#include <stdexcept>

#include "hybridid/ocp.hpp"
#include "hybridid/qp.hpp"
#include "test_support.hpp"

namespace hybridid::testing {

inline CostSpec tracking_cost(int n, int m, int /*T*/, const Mat& ref, double r = 0.1,
                              double rd = 0.01) {
  return {Mat::Identity(n, n), r * Mat::Identity(m, m), rd * Mat::Identity(m, m), Mat(), ref};
}

/// Small random model with enforced lower bounds and its LC problem.
inline MpccProblem toy_problem(std::mt19937_64& rng, int nr, int T, bool enforce = true) {
  auto model = random_model(rng, 1, 1, nr, nr);
  if (enforce) model = enforce_strict_lower_bounds(model, 0.5, 0.5);
  const auto lc = extract_lc(model);
  const Mat ref = randn(rng, 1, T);
  auto p = build_mpcc(lc, tracking_cost(1, 1, T, ref), randu(rng, 1, -1.0, 1.0), T,
                      Vec::Constant(1, -1.0), Vec::Constant(1, 1.0), randu(rng, 1, -1.0, 1.0));
  const Box box{Vec::Constant(2, -3.0), Vec::Constant(2, 3.0)};
  p.conditions = check_conditions(lc, model, sample_box(box, 1, 100, 7));
  p.model = model;
  return p;
}

/// Stacked QP of the pure-linear problem in the full (u, x) space. Returns
/// the optimal cost and writes the stacked inputs; throws if the QP fails.
inline double lq_reference(const MpccProblem& p, Vec& u_out) {
  const int T = p.T, n = p.n(), m = p.m(), N = T * (m + n);
  const auto& c = p.cost;
  Mat P = Mat::Zero(N, N);
  Vec q = Vec::Zero(N);
  double q0 = 0.0;
  auto iu = [&](int t) { return t * m; };
  auto ix = [&](int t) { return T * m + (t - 1) * n; };
  for (int t = 0; t < T; ++t) {
    P.block(iu(t), iu(t), m, m) += 2.0 * (c.R + c.R_delta);
    if (t > 0) {
      P.block(iu(t - 1), iu(t - 1), m, m) += 2.0 * c.R_delta;
      P.block(iu(t), iu(t - 1), m, m) -= 2.0 * c.R_delta;
      P.block(iu(t - 1), iu(t), m, m) -= 2.0 * c.R_delta;
    }
    P.block(ix(t + 1), ix(t + 1), n, n) += 2.0 * c.Q;
    q.segment(ix(t + 1), n) -= 2.0 * c.Q * c.reference.col(t);
    q0 += c.reference.col(t).dot(c.Q * c.reference.col(t));
  }
  q.segment(0, m) -= 2.0 * c.R_delta * p.u_prev;
  q0 += p.u_prev.dot(c.R_delta * p.u_prev);
  Mat Aeq = Mat::Zero(T * n, N);
  Vec beq = Vec::Zero(T * n);
  for (int t = 0; t < T; ++t) {
    Aeq.block(t * n, ix(t + 1), n, n) = Mat::Identity(n, n);
    Aeq.block(t * n, iu(t), n, m) = -p.lc.B_u;
    beq.segment(t * n, n) = p.lc.d;
    if (t == 0)
      beq.segment(0, n) += p.lc.A * p.x0;
    else
      Aeq.block(t * n, ix(t), n, n) = -p.lc.A;
  }
  Mat Ain = Mat::Zero(2 * T * m, N);
  Vec bin(2 * T * m);
  for (int i = 0; i < T * m; ++i) {
    Ain(2 * i, i) = 1.0;
    bin(2 * i) = p.u_hi(i % m);
    Ain(2 * i + 1, i) = -1.0;
    bin(2 * i + 1) = -p.u_lo(i % m);
  }
  const auto res = qp::solve_dense_qp(P, q, Aeq, beq, Ain, bin);
  if (res.status != qp::QpStatus::Optimal) throw std::runtime_error("LQ reference QP failed");
  u_out = res.z.head(T * m);
  return 0.5 * res.z.dot(P * res.z) + q.dot(res.z) + q0;
}

inline Vec stacked(const Mat& u_traj) {
  Vec v(u_traj.size());
  for (int t = 0; t < u_traj.rows(); ++t)
    v.segment(t * u_traj.cols(), u_traj.cols()) = u_traj.row(t).transpose();
  return v;
}

}  // namespace hybridid::testing
