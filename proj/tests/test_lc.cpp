#include <cmath>

#include "doctest.h"
#include "hybridid/lc_model.hpp"
#include "hybridid/model.hpp"
#include "test_support.hpp"

using namespace hybridid;
using hybridid::testing::randn;
using hybridid::testing::randu;

namespace {

AffinePiece scalar_piece(double a, double b, double c) {
  return {Mat::Constant(1, 1, a), Mat::Constant(1, 1, b), Vec::Constant(1, c)};
}

// Residual of 0 ≤ M w + q ⊥ w ≥ 0.
double lcp_residual(const Mat& M, const Vec& q, const Vec& w) {
  if (w.size() == 0) return 0.0;
  const Vec s = M * w + q;
  double r = std::max(0.0, -w.minCoeff());
  r = std::max(r, -s.minCoeff());
  r = std::max(r, w.cwiseProduct(s).cwiseAbs().maxCoeff());
  return r;
}

}  // namespace

TEST_CASE("extract_lc: scalar model with one piece per side") {
  const DiffMaxAffineModel model(1, 1, {scalar_piece(0.5, 1.0, 0.2)}, {scalar_piece(-0.3, 0.0, 0.1)},
                                 scalar_piece(0.0, 0.0, -1.0), scalar_piece(0.0, 0.0, -1.0));
  const auto lc = extract_lc(model);
  CHECK(lc.l() == 2);
  CHECK(lc.E_w.isApprox(Mat::Identity(2, 2)));
  // −W Q⁻¹ Fᵀ with F = −I and W = [1 −1].
  Mat bw(1, 2);
  bw << 1.0, -1.0;
  CHECK(lc.B_w.isApprox(bw));
  // With targets active by default, A and d come from the targets only.
  CHECK(std::abs(lc.A(0, 0)) <= 1e-15);
  CHECK(std::abs(lc.d(0)) <= 1e-15);
}

TEST_CASE("extract_lc: unit Hessians give all-ones diagonal blocks") {
  std::mt19937_64 rng(41);
  const auto base = hybridid::testing::random_model(rng, 3, 1, 4, 2);
  const auto model = base.with_hessians(Vec::Ones(3), Vec::Ones(3));
  const auto lc = extract_lc(model);
  CHECK(lc.l() == 3 * 4 + 3 * 2);
  CHECK(lc.blocks.size() == 6);
  for (const auto& b : lc.blocks) {
    const Mat blk = lc.E_w.block(b.begin, b.begin, b.size, b.size);
    CHECK((blk - Mat::Ones(b.size, b.size)).cwiseAbs().maxCoeff() <= 1e-15);
  }
  const auto rep = check_conditions(lc, model, {{Vec::Zero(3), Vec::Zero(1)}});
  CHECK(rep.cond2_block_diagonal);
  CHECK(rep.cond2_off_block_mass == 0.0);
  CHECK_FALSE(rep.cond2_elementwise);
}

TEST_CASE("step_lcp reproduces forward and solves the LCP") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const auto model = hybridid::testing::random_model(rng, 3, 2, 4, 3);
    const auto lc = extract_lc(model);
    const LcStepper stepper(lc);
    for (int i = 0; i < 50; ++i) {
      const Vec x = randn(rng, 3, 1), u = randn(rng, 2, 1);
      const auto st = stepper.step(x, u);
      CHECK((st.x_next - forward(model, x, u).x_next).cwiseAbs().maxCoeff() <= 1e-8);
      const Vec q = lc.E_x * x + lc.E_u * u + lc.e;
      CHECK(lcp_residual(lc.E_w, q, st.w) <= 1e-9);
    }
  }
}

TEST_CASE("step_lcp: identical sides give zero successor") {
  std::mt19937_64 rng(43);
  const auto base = hybridid::testing::random_model(rng, 2, 1, 3, 3);
  const DiffMaxAffineModel model(2, 1, base.alpha_pieces(), base.alpha_pieces(), base.psi(),
                                 base.psi());
  const auto lc = extract_lc(model);
  for (int i = 0; i < 50; ++i) {
    const Vec x = randn(rng, 2, 1), u = randn(rng, 1, 1);
    CHECK(step_lcp(lc, x, u).x_next.cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("E_w is PSD and block diagonal for random Hessians") {
  std::mt19937_64 rng(44);
  for (int trial = 0; trial < 20; ++trial) {
    const auto model = hybridid::testing::random_model(rng, 3, 2, 5, 4);
    const auto lc = extract_lc(model);
    const auto rep = check_conditions(lc, model, {{Vec::Zero(3), Vec::Zero(2)}});
    CHECK(rep.e_w_min_eigenvalue >= -1e-10);
    CHECK(rep.cond2_off_block_mass <= 1e-12);
    CHECK(rep.cond2_block_diagonal);
  }
}

TEST_CASE("rescaling the Hessians leaves the simulated successor unchanged") {
  std::mt19937_64 rng(45);
  const auto model = hybridid::testing::random_model(rng, 2, 2, 3, 3);
  const auto scaled = model.with_hessians(randu(rng, 2, 0.01, 100.0), randu(rng, 2, 0.01, 100.0));
  const LcStepper a(extract_lc(model)), b(extract_lc(scaled));
  for (int i = 0; i < 100; ++i) {
    const Vec x = randn(rng, 2, 1), u = randn(rng, 2, 1);
    CHECK((a.step(x, u).x_next - b.step(x, u).x_next).cwiseAbs().maxCoeff() <= 1e-8);
  }
}

TEST_CASE("conditions hold after enforcing strict lower bounds") {
  std::mt19937_64 rng(46);
  for (int trial = 0; trial < 5; ++trial) {
    const auto model =
        enforce_strict_lower_bounds(hybridid::testing::random_model(rng, 2, 1, 4, 3), 1.0, 1.0);
    const auto lc = extract_lc(model);
    CHECK(lc.strict_lower_bounds);
    Box box{Vec::Constant(3, -2.0), Vec::Constant(3, 2.0)};
    const auto samples = sample_box(box, 2, 300, 7);
    CHECK(samples.size() == 8 + 300);
    const auto rep = check_conditions(lc, model, samples);
    CHECK(rep.cond3_fraction_satisfied == 1.0);
    CHECK(rep.cond1_max_successor_gap <= 1e-8);
    CHECK(rep.strict_lb_margin >= 1.0 - 1e-12);
    CHECK(rep.all_hold());
  }
}

TEST_CASE("Condition 3 fails where both targets are the unique maxima") {
  const DiffMaxAffineModel model(1, 1, {scalar_piece(1.0, 0.0, 0.0)}, {scalar_piece(0.0, 0.0, 0.0)},
                                 scalar_piece(0.0, 0.0, 5.0), scalar_piece(0.0, 0.0, 5.0));
  const auto lc = extract_lc(model);
  const auto rep = check_conditions(lc, model, {{Vec::Zero(1), Vec::Zero(1)}});
  CHECK(rep.cond3_fraction_satisfied == 0.0);
  CHECK_FALSE(rep.all_hold());
}

TEST_CASE("linear LC model steps without complementarity") {
  Mat A(2, 2);
  A << 0.9, 0.1, 0.0, 0.8;
  const Mat B = Mat::Ones(2, 1);
  const Vec d = Vec::Constant(2, 0.5);
  const auto lc = linear_lc(A, B, d);
  CHECK(lc.l() == 0);
  const Vec x = Vec::Constant(2, 1.0), u = Vec::Constant(1, 2.0);
  const auto st = step_lcp(lc, x, u);
  CHECK(st.w.size() == 0);
  CHECK((st.x_next - (A * x + B * u + d)).norm() <= 1e-15);
}

TEST_CASE("permuted LC models simulate identically") {
  std::mt19937_64 rng(47);
  const auto model = hybridid::testing::random_model(rng, 2, 1, 3, 4);
  const auto lc = extract_lc(model);
  std::vector<int> perm(lc.l());
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  const LcStepper a(lc), b(lc.permuted(perm));
  for (int i = 0; i < 100; ++i) {
    const Vec x = randn(rng, 2, 1), u = randn(rng, 1, 1);
    CHECK((a.step(x, u).x_next - b.step(x, u).x_next).cwiseAbs().maxCoeff() <= 1e-8);
  }
}
