#include <cmath>

#include "doctest.h"
#include "hybridid/ocp.hpp"
#include "hybridid/qp.hpp"
#include "mpcc_oracle.hpp"
#include "ocp_fixtures.hpp"
#include "test_support.hpp"

using namespace hybridid;
using hybridid::testing::enumerate_mpcc;
using hybridid::testing::lq_reference;
using hybridid::testing::stacked;
using hybridid::testing::toy_problem;
using hybridid::testing::tracking_cost;
using hybridid::testing::randn;
using hybridid::testing::randu;

TEST_CASE("build_mpcc: counting and validation") {
  const auto lc = linear_lc(Mat::Identity(2, 2), Mat::Ones(2, 1), Vec::Zero(2));
  const auto p = build_mpcc(lc, tracking_cost(2, 1, 7, Mat::Zero(2, 7)), Vec::Zero(2), 7,
                            Vec::Constant(1, 0.95), Vec::Constant(1, 1.2));
  CHECK(p.num_variables() == 7 * 1 + 7 * 2 + 0);
  CHECK(p.u_prev.size() == 1);
  CHECK_THROWS_AS((void)build_mpcc(lc, tracking_cost(2, 1, 1, Mat::Zero(2, 1)), Vec::Zero(3), 1,
                                   Vec::Zero(1), Vec::Ones(1)),
                  Error);
  CHECK_THROWS_AS((void)build_mpcc(lc, tracking_cost(2, 1, 1, Mat::Zero(2, 1)), Vec::Zero(2), 1,
                                   Vec::Ones(1), Vec::Zero(1)),
                  Error);
  auto bad = tracking_cost(2, 1, 1, Mat::Zero(2, 1));
  bad.Q(0, 0) = -1.0;
  CHECK_THROWS_AS((void)build_mpcc(lc, bad, Vec::Zero(2), 1, Vec::Zero(1), Vec::Ones(1)), Error);
  CHECK_THROWS_AS((void)build_mpcc(lc, tracking_cost(2, 1, 2, Mat::Zero(2, 1)), Vec::Zero(2), 2,
                                   Vec::Zero(1), Vec::Ones(1)),
                  Error);
}

TEST_CASE("solve_mpcc: degenerate LQ case matches the stacked QP") {
  std::mt19937_64 rng(3);
  for (int T : {1, 5, 10}) {
    const int n = 2, m = 1;
    Mat A = randn(rng, n, n, 0.4);
    const auto lc = linear_lc(A, randn(rng, n, m), randn(rng, n, 1, 0.1));
    auto p = build_mpcc(lc, tracking_cost(n, m, T, randn(rng, n, T)), randn(rng, n, 1), T,
                        Vec::Constant(m, -0.5), Vec::Constant(m, 0.5), Vec::Zero(m));
    Vec u_ref;
    const double J_ref = lq_reference(p, u_ref);
    const auto sol = solve_mpcc(p);
    CHECK(sol.status == MpccStatus::Stationary);
    CHECK(std::abs(sol.objective - J_ref) <= 1e-8 * (1.0 + std::abs(J_ref)));
    CHECK((stacked(sol.u_traj) - u_ref).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(std::abs(horizon_cost(p, sol.x_traj, sol.u_traj) - sol.objective) <= 1e-9);
  }
}

TEST_CASE("solve_mpcc: toy instances match exhaustive branch enumeration") {
  std::mt19937_64 rng(11);
  int checked = 0;
  for (int trial = 0; trial < 24; ++trial) {
    const int nr = 1 + trial % 2;
    const int T = 1 + (trial / 2) % 2;
    const auto p = toy_problem(rng, nr, T);
    REQUIRE(p.l() * p.T <= 8);
    const auto sol = solve_mpcc(p);
    const auto best = enumerate_mpcc(p);
    REQUIRE(std::isfinite(best.objective));
    INFO("trial " << trial << " nr " << nr << " T " << T);
    CHECK(sol.status == MpccStatus::Stationary);
    CHECK(std::abs(sol.objective - best.objective) <= 1e-6 * (1.0 + std::abs(best.objective)));
    const auto cert = certify_stationarity(p, sol);
    CHECK(cert.residual <= 1e-6);
    CHECK(cert.complementarity <= 1e-8);
    CHECK(cert.pass);
    ++checked;
  }
  CHECK(checked == 24);
}

TEST_CASE("certify_stationarity: perturbed inputs fail") {
  std::mt19937_64 rng(5);
  auto p = toy_problem(rng, 2, 2);
  p.u_lo = Vec::Constant(1, -5.0);
  p.u_hi = Vec::Constant(1, 5.0);
  auto sol = solve_mpcc(p);
  REQUIRE(sol.status == MpccStatus::Stationary);
  REQUIRE(certify_stationarity(p, sol).pass);
  sol.u_traj(0, 0) += 0.1;
  auto [X, W] = simulate_horizon(p, sol.u_traj);
  sol.x_traj = X;
  sol.w_traj = W;
  const auto cert = certify_stationarity(p, sol);
  CHECK(cert.residual > 1e-6);
  CHECK_FALSE(cert.pass);
}

TEST_CASE("certify_stationarity: gating on conditions and strict lower bounds") {
  std::mt19937_64 rng(8);
  auto p = toy_problem(rng, 2, 1, false);
  const auto sol = solve_mpcc(p);
  REQUIRE(sol.status == MpccStatus::Stationary);
  const auto cert = certify_stationarity(p, sol);
  CHECK(cert.residual <= 1e-6);
  CHECK_FALSE(cert.pass);
  CHECK(cert.reason == "conditions unverified");

  auto q = toy_problem(rng, 2, 1, true);
  q.conditions.reset();
  const auto sol_q = solve_mpcc(q);
  CHECK_FALSE(certify_stationarity(q, sol_q).pass);
  CHECK(certify_stationarity(q, sol_q).reason == "conditions unverified");
}

TEST_CASE("certify_stationarity: infeasible point is an error") {
  std::mt19937_64 rng(9);
  const auto p = toy_problem(rng, 1, 1);
  auto sol = solve_mpcc(p);
  sol.x_traj(1, 0) += 1.0;
  CHECK_THROWS_AS((void)certify_stationarity(p, sol), Error);
}

TEST_CASE("solve_mpcc: complementarity violation is non-increasing along the path") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 6; ++trial) {
    const auto p = toy_problem(rng, 2, 2);
    const auto sol = solve_mpcc(p);
    REQUIRE(sol.stages.size() == 8);
    for (std::size_t i = 1; i < sol.stages.size(); ++i)
      CHECK(sol.stages[i].comp_violation <= sol.stages[i - 1].comp_violation);
    CHECK(sol.stages.front().tau == doctest::Approx(1e-1));
    CHECK(sol.stages.back().tau == doctest::Approx(1e-8));
  }
}

TEST_CASE("solve_mpcc: inputs invariant under positive rescaling of H") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    auto p = toy_problem(rng, 2, 2);
    const auto& model = *p.model;
    const auto scaled = model.with_hessians(3.7 * model.h_alpha(), 0.2 * model.h_beta());
    auto q = p;
    q.lc = extract_lc(scaled);
    const auto a = solve_mpcc(p), b = solve_mpcc(q);
    REQUIRE(a.status == MpccStatus::Stationary);
    REQUIRE(b.status == MpccStatus::Stationary);
    CHECK((a.u_traj - b.u_traj).cwiseAbs().maxCoeff() <= 1e-6);
  }
}

TEST_CASE("direct_l: box-clamped and interior minimizers of a 1-D quadratic") {
  const auto f = [](const Vec& x) { return (x(0) - 2.0) * (x(0) - 2.0); };
  const auto r = direct_l(f, Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  CHECK(std::abs(r.x(0) - 1.0) <= 1e-3);
  const auto g = [](const Vec& x) { return (x(0) - 0.3) * (x(0) - 0.3); };
  const auto s = direct_l(g, Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  CHECK(std::abs(s.x(0) - 0.3) <= 1e-3);
  CHECK(s.evaluations <= 5000);
  // Deterministic.
  const auto s2 = direct_l(g, Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  CHECK(s2.x(0) == s.x(0));
}

TEST_CASE("baseline_solver: degenerate T=1 case matches the analytic solution") {
  const auto lc = linear_lc(Mat::Constant(1, 1, 0.8), Mat::Constant(1, 1, 0.5), Vec::Zero(1));
  const Mat ref = Mat::Constant(1, 1, 0.6);
  auto p = build_mpcc(lc, tracking_cost(1, 1, 1, ref, 0.1, 0.0), Vec::Constant(1, 0.2), 1,
                      Vec::Constant(1, -1.0), Vec::Constant(1, 1.0));
  // min (0.16 + 0.5u − 0.6)² + 0.1u²  →  u = 0.5·0.44 / (0.25 + 0.1)
  const double u_star = 0.5 * 0.44 / 0.35;
  const auto b = baseline_solver(p);
  CHECK(std::abs(b.u_traj(0, 0) - u_star) <= 1e-3);
  CHECK(b.status == MpccStatus::Feasible);
}

TEST_CASE("baseline_solver: never below a certified solve_mpcc on toy instances") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 8; ++trial) {
    const auto p = toy_problem(rng, 2, 1 + trial % 2);
    const auto sol = solve_mpcc(p);
    REQUIRE(certify_stationarity(p, sol).pass);
    const auto base = baseline_solver(p);
    CHECK(base.objective >= sol.objective - 1e-6);
  }
}

TEST_CASE("solve_single_shooting: agrees with solve_mpcc on a linear model") {
  std::mt19937_64 rng(23);
  auto p = toy_problem(rng, 1, 2);
  const auto a = solve_mpcc(p);
  const auto b = solve_single_shooting(p);
  CHECK(b.status == MpccStatus::Stationary);
  CHECK((a.u_traj - b.u_traj).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(std::abs(a.objective - b.objective) <= 1e-8);
}

TEST_CASE("mpc_run: equilibrium with zero reference stays put") {
  // x⁺ = 0.5x + u as an enforced single-piece model.
  const AffinePiece a{Mat::Constant(1, 1, 0.5), Mat::Constant(1, 1, 1.0), Vec::Zero(1)};
  const AffinePiece z{Mat::Zero(1, 1), Mat::Zero(1, 1), Vec::Zero(1)};
  const auto model = enforce_strict_lower_bounds(DiffMaxAffineModel(1, 1, {a}, {z}, z, z), 1.0, 1.0);
  Plant plant;
  plant.name = "linear";
  plant.n = 1;
  plant.m = 1;
  plant.step = [](const Vec& x, const Vec& u) { return Vec(0.5 * x + u); };
  MpcConfig cfg;
  cfg.T = 4;
  cfg.steps = 20;
  cfg.u_lo = Vec::Constant(1, -1.0);
  cfg.u_hi = Vec::Constant(1, 1.0);
  cfg.Q = Mat::Identity(1, 1);
  cfg.R = Mat::Zero(1, 1);
  cfg.R_delta = 0.001 * Mat::Identity(1, 1);
  cfg.reference = Mat::Zero(1, 24);
  cfg.u_init = Vec::Zero(1);
  for (auto mode : {MpcMode::Mpcc, MpcMode::SingleShooting}) {
    cfg.mode = mode;
    const auto log = mpc_run(model, plant, Vec::Zero(1), cfg);
    CHECK(log.U.cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(log.X.cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(log.events.empty());
  }
}

TEST_CASE("mpc_run: MPCC and single-shooting modes agree on a linear plant") {
  const AffinePiece a{Mat::Constant(1, 1, 0.9), Mat::Constant(1, 1, 0.4), Vec::Constant(1, 0.1)};
  const AffinePiece b{Mat::Constant(1, 1, -0.1), Mat::Zero(1, 1), Vec::Zero(1)};
  const auto model = enforce_strict_lower_bounds(DiffMaxAffineModel(1, 1, {a}, {b}, a, b), 1.0, 1.0);
  Plant plant;
  plant.name = "linear";
  plant.n = 1;
  plant.m = 1;
  plant.step = [&](const Vec& x, const Vec& u) { return predict(model, x, u); };
  MpcConfig cfg;
  cfg.T = 5;
  cfg.steps = 30;
  cfg.u_lo = Vec::Constant(1, -1.0);
  cfg.u_hi = Vec::Constant(1, 1.0);
  cfg.Q = Mat::Identity(1, 1);
  cfg.R = 0.01 * Mat::Identity(1, 1);
  cfg.R_delta = 0.001 * Mat::Identity(1, 1);
  cfg.reference = Mat(sine_sweep(35, 0.5, 0.3, 0.01, 0.05).transpose());
  cfg.mode = MpcMode::Mpcc;
  const auto l1 = mpc_run(model, plant, Vec::Zero(1), cfg);
  cfg.mode = MpcMode::SingleShooting;
  const auto l2 = mpc_run(model, plant, Vec::Zero(1), cfg);
  CHECK((l1.X - l2.X).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(l1.events.empty());
  const std::string csv = mpc_log_csv(l1, false);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == cfg.steps + 1);
  CHECK(csv.rfind("step,time_s,x1,u1,r,objective,kkt_residual\n", 0) == 0);
}
