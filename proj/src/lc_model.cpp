#include "hybridid/lc_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "hybridid/qp.hpp"

namespace hybridid {

void LCModel::validate() const {
  const int nn = n(), mm = m(), ll = l();
  require_dims(A.cols() == nn && B_u.rows() == nn && d.size() == nn, "LC dynamics shape");
  require_dims(B_w.rows() == nn && B_w.cols() == ll, "LC B_w shape");
  require_dims(E_w.cols() == ll && E_x.rows() == ll && E_x.cols() == nn && E_u.rows() == ll &&
                   E_u.cols() == mm && e.size() == ll,
               "LC complementarity shape");
  for (const auto& b : blocks)
    require_dims(b.begin >= 0 && b.size >= 1 && b.begin + b.size <= ll, "LC block range");
}

LCModel LCModel::permuted(const std::vector<int>& perm) const {
  require_dims(static_cast<int>(perm.size()) == l(), "permutation length");
  LCModel out = *this;
  out.blocks.clear();
  for (int i = 0; i < l(); ++i) {
    out.B_w.col(i) = B_w.col(perm[i]);
    out.E_x.row(i) = E_x.row(perm[i]);
    out.E_u.row(i) = E_u.row(perm[i]);
    out.e(i) = e(perm[i]);
    for (int j = 0; j < l(); ++j) out.E_w(i, j) = E_w(perm[i], perm[j]);
  }
  return out;
}

LCModel linear_lc(Mat A, Mat B_u, Vec d) {
  LCModel lc;
  const auto n = A.rows();
  const auto m = B_u.cols();
  lc.A = std::move(A);
  lc.B_u = std::move(B_u);
  lc.d = std::move(d);
  lc.B_w = Mat::Zero(n, 0);
  lc.E_w = Mat::Zero(0, 0);
  lc.E_x = Mat::Zero(0, n);
  lc.E_u = Mat::Zero(0, m);
  lc.e = Vec::Zero(0);
  lc.validate();
  return lc;
}

LCModel extract_lc(const DiffMaxAffineModel& model) {
  const auto qp = qp::build_consolidated_qp(model);
  const int n = model.n(), m = model.m();
  const Mat W = qp::output_map(n);
  const Vec qinv = qp.Q().diagonal().cwiseInverse();  // Q is diagonal here

  const Mat WQinv = W * qinv.asDiagonal();
  const Mat FQinv = qp.F() * qinv.asDiagonal();
  const Mat neg_wqr = -WQinv * qp.R();
  const Mat fqr_g = FQinv * qp.R() - qp.G();

  LCModel lc;
  lc.A = neg_wqr.leftCols(n);
  lc.B_u = neg_wqr.rightCols(m);
  lc.B_w = -WQinv * qp.F().transpose();
  lc.d = -WQinv * qp.p();
  lc.E_w = FQinv * qp.F().transpose();
  lc.E_x = fqr_g.leftCols(n);
  lc.E_u = fqr_g.rightCols(m);
  lc.e = FQinv * qp.p() + qp.h();
  const int ra = model.nr_alpha(), rb = model.nr_beta();
  for (int k = 0; k < n; ++k) lc.blocks.push_back({k * ra, ra, k, true});
  for (int k = 0; k < n; ++k) lc.blocks.push_back({n * ra + k * rb, rb, k, false});
  lc.strict_lower_bounds = model.strict_lower_bounds();
  lc.validate();
  return lc;
}

namespace {

// K with K Kᵀ = S for a symmetric PSD S, from its eigendecomposition.
Mat psd_factor(const Mat& S) {
  if (S.rows() == 0) return Mat::Zero(0, 0);
  Eigen::SelfAdjointEigenSolver<Mat> eig(S);
  const Vec& ev = eig.eigenvalues();
  const double cut = 1e-13 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  std::vector<int> keep;
  for (int i = 0; i < ev.size(); ++i)
    if (ev(i) > cut) keep.push_back(i);
  Mat K(S.rows(), static_cast<int>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    K.col(j) = eig.eigenvectors().col(keep[j]) * std::sqrt(ev(keep[j]));
  return K;
}

}  // namespace

LcStepper::LcStepper(LCModel lc) : lc_(std::move(lc)) {
  lc_.validate();
  const int l = lc_.l();
  if (!lc_.blocks.empty()) {
    // Factor block by block; off-block entries are ignored only when zero.
    double off = 0.0;
    std::vector<int> owner(l, -1);
    for (std::size_t b = 0; b < lc_.blocks.size(); ++b)
      for (int i = 0; i < lc_.blocks[b].size; ++i) owner[lc_.blocks[b].begin + i] = static_cast<int>(b);
    for (int i = 0; i < l; ++i)
      for (int j = 0; j < l; ++j)
        if (owner[i] < 0 || owner[i] != owner[j]) off = std::max(off, std::abs(lc_.E_w(i, j)));
    if (off == 0.0) {
      std::vector<Mat> parts;
      int cols = 0;
      for (const auto& b : lc_.blocks) {
        parts.push_back(psd_factor(lc_.E_w.block(b.begin, b.begin, b.size, b.size)));
        cols += static_cast<int>(parts.back().cols());
      }
      K_ = Mat::Zero(l, cols);
      int c = 0;
      for (std::size_t b = 0; b < lc_.blocks.size(); ++b) {
        K_.block(lc_.blocks[b].begin, c, lc_.blocks[b].size, parts[b].cols()) = parts[b];
        c += static_cast<int>(parts[b].cols());
      }
      return;
    }
  }
  K_ = psd_factor(lc_.E_w);
}

Vec LcStepper::solve_lcp(const Vec& q) const {
  const int l = lc_.l();
  require_dims(q.size() == l, "LCP offset length");
  if (l == 0) return Vec::Zero(0);
  const double scale = 1.0 + q.cwiseAbs().maxCoeff();
  if (K_.cols() == 0) {
    if (q.minCoeff() < -1e-12 * scale)
      throw Error(ErrorCode::Infeasible, "LCP with zero matrix and negative offset");
    return Vec::Zero(l);
  }
  const int r = static_cast<int>(K_.cols());
  // min ½‖v‖² s.t. −K v ≤ q ; multipliers are w.
  qp::DenseQpOptions opts;
  opts.tol = 1e-13;
  const auto res = qp::solve_dense_qp(Mat::Identity(r, r), Vec::Zero(r), Mat(0, r), Vec(0), -K_, q,
                                      opts);
  if (res.status != qp::QpStatus::Optimal)
    throw Error(ErrorCode::Infeasible,
                std::string("LC step QP failed: ") + qp::to_string(res.status));
  return res.lambda;
}

LcStep LcStepper::step(const Vec& x, const Vec& u) const {
  require_dims(x.size() == lc_.n() && u.size() == lc_.m(), "LC step input shape");
  const Vec q = lc_.E_x * x + lc_.E_u * u + lc_.e;
  Vec w = solve_lcp(q);
  Vec x_next = lc_.A * x + lc_.B_u * u + lc_.B_w * w + lc_.d;
  return {std::move(x_next), std::move(w)};
}

LcStep step_lcp(const LCModel& lc, const Vec& x, const Vec& u) {
  return LcStepper(lc).step(x, u);
}

bool ConditionReport::all_hold() const {
  return samples > 0 && cond1_max_successor_gap <= 1e-8 && cond2_block_diagonal &&
         e_w_min_eigenvalue >= -1e-10 && cond3_fraction_satisfied == 1.0 &&
         strict_lb_margin > 0.0;
}

ConditionReport check_conditions(const LCModel& lc, const DiffMaxAffineModel& model,
                                 const std::vector<StateInput>& samples) {
  require_arg(!samples.empty(), "check_conditions needs samples");
  lc.validate();
  require_dims(lc.n() == model.n() && lc.m() == model.m(), "LC/model dimensions");
  const int l = lc.l();
  ConditionReport rep;
  rep.samples = static_cast<int>(samples.size());

  // Condition 2: block-diagonal structure of E_w.
  std::vector<int> owner(l, -1);
  for (std::size_t b = 0; b < lc.blocks.size(); ++b)
    for (int i = 0; i < lc.blocks[b].size; ++i) owner[lc.blocks[b].begin + i] = static_cast<int>(b);
  double off = 0.0;
  bool covered = true;
  for (int i = 0; i < l; ++i) {
    covered = covered && owner[i] >= 0;
    for (int j = 0; j < l; ++j)
      if (owner[i] < 0 || owner[i] != owner[j]) off = std::max(off, std::abs(lc.E_w(i, j)));
  }
  rep.cond2_off_block_mass = off;
  rep.cond2_block_diagonal = covered && off <= 1e-12;
  if (l > 0) {
    Eigen::SelfAdjointEigenSolver<Mat> eig(lc.E_w, Eigen::EigenvaluesOnly);
    rep.e_w_min_eigenvalue = eig.eigenvalues().minCoeff();
    const Mat offdiag = lc.E_w - Mat(lc.E_w.diagonal().asDiagonal());
    rep.cond2_elementwise =
        offdiag.cwiseAbs().maxCoeff() <= 1e-12 && lc.E_w.diagonal().minCoeff() > 0.0;
  } else {
    rep.cond2_elementwise = true;
  }

  // Condition 1: same successor from differently ordered complementarity rows.
  std::vector<int> reversed(l);
  std::iota(reversed.begin(), reversed.end(), 0);
  std::reverse(reversed.begin(), reversed.end());
  std::vector<int> shuffled(l);
  std::iota(shuffled.begin(), shuffled.end(), 0);
  std::mt19937_64 perm_rng(0x5eedULL);
  std::shuffle(shuffled.begin(), shuffled.end(), perm_rng);
  const LcStepper base(lc);
  const LcStepper rev(lc.permuted(reversed));
  const LcStepper shuf(lc.permuted(shuffled));

  int cond3_hits = 0;
  double margin = std::numeric_limits<double>::infinity();
  for (const auto& [x, u] : samples) {
    const Vec x1 = base.step(x, u).x_next;
    rep.cond1_max_successor_gap = std::max(
        {rep.cond1_max_successor_gap, (x1 - rev.step(x, u).x_next).cwiseAbs().maxCoeff(),
         (x1 - shuf.step(x, u).x_next).cwiseAbs().maxCoeff()});

    if (l > 0) {
      const Vec rows = lc.E_x * x + lc.E_u * u + lc.e;
      if (rows.minCoeff() < 0.0) ++cond3_hits;
    }

    for (int side = 0; side < 2; ++side) {
      const auto& pieces = side == 0 ? model.alpha_pieces() : model.beta_pieces();
      const Vec target = (side == 0 ? model.psi() : model.phi()).eval(x, u);
      Vec best = pieces.front().eval(x, u);
      for (std::size_t i = 1; i < pieces.size(); ++i) best = best.cwiseMax(pieces[i].eval(x, u));
      margin = std::min(margin, (best - target).minCoeff());
    }
  }
  rep.cond3_fraction_satisfied = static_cast<double>(cond3_hits) / samples.size();
  rep.strict_lb_margin = margin;
  return rep;
}

std::vector<StateInput> sample_box(const Box& box, int n, int count, std::uint64_t seed) {
  const int dim = static_cast<int>(box.lo.size());
  require_dims(box.hi.size() == dim && n <= dim, "sample box shape");
  std::vector<StateInput> out;
  if (dim <= 12) {
    for (int mask = 0; mask < (1 << dim); ++mask) {
      Vec y(dim);
      for (int i = 0; i < dim; ++i) y(i) = (mask & (1 << i)) ? box.hi(i) : box.lo(i);
      out.emplace_back(y.head(n), y.tail(dim - n));
    }
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  for (int s = 0; s < count; ++s) {
    Vec y(dim);
    for (int i = 0; i < dim; ++i) y(i) = box.lo(i) + ud(rng) * (box.hi(i) - box.lo(i));
    out.emplace_back(y.head(n), y.tail(dim - n));
  }
  return out;
}

}  // namespace hybridid
