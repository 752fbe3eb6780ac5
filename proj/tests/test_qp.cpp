#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "hybridid/model.hpp"
#include "hybridid/qp.hpp"
#include "test_support.hpp"

using namespace hybridid;
using namespace hybridid::qp;
using hybridid::testing::randn;
using hybridid::testing::randu;

namespace {

ParametricQP scalar_qp(double q, double p, double f, double h) {
  return {Mat::Constant(1, 1, q), Mat::Zero(1, 1), Vec::Constant(1, p), Mat::Constant(1, 1, f),
          Mat::Zero(1, 1), Vec::Constant(1, h)};
}

// Enumerates every active subset, solves the equality-constrained KKT system
// and keeps the candidate that satisfies all KKT conditions.
bool brute_force_qp(const Mat& H, const Vec& g, const Mat& A, const Vec& b, Vec& z_out) {
  const int s = static_cast<int>(H.rows()), l = static_cast<int>(A.rows());
  for (int mask = 0; mask < (1 << l); ++mask) {
    std::vector<int> rows;
    for (int i = 0; i < l; ++i)
      if (mask & (1 << i)) rows.push_back(i);
    const int q = static_cast<int>(rows.size());
    Mat K = Mat::Zero(s + q, s + q);
    Vec rhs = Vec::Zero(s + q);
    K.topLeftCorner(s, s) = H;
    rhs.head(s) = -g;
    for (int j = 0; j < q; ++j) {
      K.block(0, s + j, s, 1) = A.row(rows[j]).transpose();
      K.block(s + j, 0, 1, s) = A.row(rows[j]);
      rhs(s + j) = b(rows[j]);
    }
    Eigen::FullPivLU<Mat> lu(K);
    if (!lu.isInvertible()) continue;
    const Vec sol = lu.solve(rhs);
    const Vec z = sol.head(s);
    const Vec lam = sol.tail(q);
    if (q > 0 && lam.minCoeff() < -1e-10) continue;
    if (((A * z - b).array() > 1e-10).any()) continue;
    z_out = z;
    return true;
  }
  return false;
}

}  // namespace

TEST_CASE("solve_qp: interior minimum") {
  const auto qp = scalar_qp(2.0, -2.0, 1.0, 10.0);
  const auto sol = solve_qp(qp, Vec::Zero(1));
  CHECK(sol.status == QpStatus::Optimal);
  CHECK(sol.z_star(0) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(sol.lambda(0) == 0.0);
}

TEST_CASE("solve_qp: binding bound has multiplier 2") {
  const auto qp = scalar_qp(2.0, -2.0, 1.0, 0.0);
  const auto sol = solve_qp(qp, Vec::Zero(1));
  CHECK(sol.status == QpStatus::Optimal);
  CHECK(std::abs(sol.z_star(0)) <= 1e-14);
  CHECK(sol.lambda(0) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(sol.active_rows == std::vector<int>{0});
}

TEST_CASE("solve_qp: infeasible constraints are reported") {
  Mat F(2, 1);
  F << 1.0, -1.0;
  const ParametricQP qp(Mat::Identity(1, 1), Mat::Zero(1, 1), Vec::Zero(1), F, Mat::Zero(2, 1),
                        Vec::Constant(2, -1.0));  // z ≤ −1 and z ≥ 1
  CHECK(solve_qp(qp, Vec::Zero(1)).status == QpStatus::Infeasible);
}

TEST_CASE("ParametricQP rejects indefinite or asymmetric Q") {
  Mat Q(2, 2);
  Q << 1.0, 0.0, 0.0, -1.0;
  CHECK_THROWS_AS(ParametricQP(Q, Mat::Zero(2, 1), Vec::Zero(2), Mat::Identity(2, 2),
                               Mat::Zero(2, 1), Vec::Zero(2)),
                  Error);
  Q << 1.0, 0.5, 0.0, 1.0;
  CHECK_THROWS_AS(ParametricQP(Q, Mat::Zero(2, 1), Vec::Zero(2), Mat::Identity(2, 2),
                               Mat::Zero(2, 1), Vec::Zero(2)),
                  Error);
}

TEST_CASE("solve_dense_qp matches active-subset enumeration on random problems") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const int s = 3, l = 6;
    const Mat M = randn(rng, s, s);
    const Mat H = M * M.transpose() + 0.1 * Mat::Identity(s, s);
    const Vec g = randn(rng, s, 1, 2.0);
    const Mat A = randn(rng, l, s);
    const Vec b = randu(rng, l, 0.1, 1.0);  // z = 0 is feasible
    Vec z_ref;
    REQUIRE(brute_force_qp(H, g, A, b, z_ref));
    const auto res = solve_dense_qp(H, g, Mat(0, s), Vec(0), A, b);
    REQUIRE(res.status == QpStatus::Optimal);
    CHECK((res.z - z_ref).cwiseAbs().maxCoeff() <= 1e-9);
    const Vec stat = H * res.z + g + A.transpose() * res.lambda;
    CHECK(stat.cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("solve_dense_qp handles equality rows, including redundant ones") {
  std::mt19937_64 rng(11);
  const int s = 4;
  const Mat M = randn(rng, s, s);
  const Mat H = M * M.transpose() + Mat::Identity(s, s);
  const Vec g = randn(rng, s, 1);
  Mat Aeq(3, s);
  Aeq.row(0) = randn(rng, 1, s);
  Aeq.row(1) = randn(rng, 1, s);
  Aeq.row(2) = Aeq.row(0) + 2.0 * Aeq.row(1);
  Vec beq(3);
  beq << 0.3, -0.2, 0.3 - 0.4;
  const auto res = solve_dense_qp(H, g, Aeq, beq, Mat(0, s), Vec(0));
  REQUIRE(res.status == QpStatus::Optimal);

  // Oracle: KKT system on the two independent rows.
  Mat K = Mat::Zero(s + 2, s + 2);
  K.topLeftCorner(s, s) = H;
  K.topRightCorner(s, 2) = Aeq.topRows(2).transpose();
  K.bottomLeftCorner(2, s) = Aeq.topRows(2);
  Vec rhs(s + 2);
  rhs << -g, beq.head(2);
  const Vec sol = K.fullPivLu().solve(rhs);
  CHECK((res.z - sol.head(s)).cwiseAbs().maxCoeff() <= 1e-12);
  const Vec stat = H * res.z + g + Aeq.transpose() * res.mu_eq;
  CHECK(stat.cwiseAbs().maxCoeff() <= 1e-12);

  beq(2) += 1.0;  // now inconsistent
  CHECK(solve_dense_qp(H, g, Aeq, beq, Mat(0, s), Vec(0)).status == QpStatus::Infeasible);
}

TEST_CASE("solve_qp: permuted constraint rows give the same minimizer") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto model = hybridid::testing::random_model(rng, 3, 2, 4, 3);
    const auto qp = build_consolidated_qp(model);
    std::vector<int> perm(qp.num_constraints());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const auto qp2 = qp.permuted_rows(perm);
    const Vec y = randn(rng, 5, 1);
    const auto a = solve_qp(qp, y);
    const auto b = solve_qp(qp2, y);
    REQUIRE(a.status == QpStatus::Optimal);
    REQUIRE(b.status == QpStatus::Optimal);
    CHECK((a.z_star - b.z_star).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK(kkt_residual(qp, y, a.z_star, a.lambda) <= 1e-10);
    CHECK(kkt_residual(qp2, y, b.z_star, b.lambda) <= 1e-10);
  }
}

TEST_CASE("solve_qp: multipliers solve stationarity on the active rows") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto model = hybridid::testing::random_model(rng, 2, 1, 3, 3);
    const auto qp = build_consolidated_qp(model);
    const Vec y = randn(rng, 3, 1);
    const auto sol = solve_qp(qp, y);
    REQUIRE(sol.status == QpStatus::Optimal);
    Mat Fa(qp.num_vars(), sol.active_rows.size());
    Vec la(sol.active_rows.size());
    for (std::size_t j = 0; j < sol.active_rows.size(); ++j) {
      Fa.col(j) = qp.F().row(sol.active_rows[j]).transpose();
      la(j) = sol.lambda(sol.active_rows[j]);
    }
    const Vec target = -(qp.Q() * sol.z_star + qp.R() * y + qp.p());
    const Vec ls = Fa.colPivHouseholderQr().solve(target);
    CHECK((Fa * ls - target).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((Fa * la - target).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("kkt_residual detects non-optimal points") {
  std::mt19937_64 rng(9);
  const auto model = hybridid::testing::random_model(rng, 2, 1, 2, 2);
  const auto qp = build_consolidated_qp(model);
  const Vec y = randn(rng, 3, 1);
  const auto sol = solve_qp(qp, y);
  CHECK(kkt_residual(qp, y, sol.z_star, sol.lambda) <= 1e-10);

  Vec z = sol.z_star;
  z(0) += 1.0;
  Eigen::SelfAdjointEigenSolver<Mat> eig(qp.Q());
  const Vec stat = qp.Q() * z + qp.R() * y + qp.p() + qp.F().transpose() * sol.lambda;
  CHECK(stat.cwiseAbs().maxCoeff() >= eig.eigenvalues().minCoeff() - 1e-12);
  CHECK(kkt_residual(qp, y, z, sol.lambda) >= eig.eigenvalues().minCoeff() - 1e-12);

  // A strictly feasible point with zero multipliers is not stationary here.
  Vec zf = sol.z_star.array() + 5.0;
  CHECK(kkt_residual(qp, y, zf, Vec::Zero(qp.num_constraints())) > 0.0);
}

TEST_CASE("build_consolidated_qp dimensions") {
  std::mt19937_64 rng(1);
  {
    const auto model = hybridid::testing::random_model(rng, 1, 1, 1, 1);
    const auto qp = build_consolidated_qp(model);
    CHECK(qp.num_vars() == 2);
    CHECK(qp.num_constraints() == 2);
    CHECK(qp.F().isApprox(-Mat::Identity(2, 2)));
  }
  {
    const auto model = hybridid::testing::random_model(rng, 2, 1, 3, 2);
    const auto qp = build_consolidated_qp(model);
    CHECK(qp.num_constraints() == 10);
    CHECK(qp.num_vars() == 4);
  }
  for (int r : {1, 3, 7}) {
    const int n = 3;
    const auto model = hybridid::testing::random_model(rng, n, 2, r, r);
    const auto qp = build_consolidated_qp(model);
    CHECK(qp.num_constraints() == 2 * n * r);
    CHECK(qp.num_vars() == 2 * n);
  }
}

TEST_CASE("consolidated QP reproduces forward through W = [I -I]") {
  std::mt19937_64 rng(42);
  const auto model = hybridid::testing::random_model(rng, 2, 1, 3, 3);
  const auto qp = build_consolidated_qp(model);
  const Mat W = output_map(2);
  for (int i = 0; i < 200; ++i) {
    const Vec x = randn(rng, 2, 1), u = randn(rng, 1, 1);
    Vec y(3);
    y << x, u;
    const auto sol = solve_qp(qp, y);
    REQUIRE(sol.status == QpStatus::Optimal);
    CHECK((W * sol.z_star - forward(model, x, u).x_next).cwiseAbs().maxCoeff() <= 1e-8);
  }
}
