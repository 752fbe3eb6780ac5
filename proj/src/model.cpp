#include "hybridid/model.hpp"

#include <cmath>
#include <utility>

namespace hybridid {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "dimension mismatch";
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Infeasible: return "infeasible";
    case ErrorCode::Divergence: return "divergence";
    case ErrorCode::DegenerateTarget: return "degenerate target";
    case ErrorCode::Parse: return "parse error";
    case ErrorCode::Io: return "io error";
  }
  return "error";
}

AffinePiece AffinePiece::zero(int n, int m) {
  return {Mat::Zero(n, n), Mat::Zero(n, m), Vec::Zero(n)};
}

bool AffinePiece::matches(int n, int m) const {
  return A.rows() == n && A.cols() == n && B.rows() == n && B.cols() == m && c.size() == n;
}

Normalization Normalization::identity(int n, int m) {
  return {Vec::Zero(n), Vec::Ones(n), Vec::Zero(m), Vec::Ones(m)};
}

bool Normalization::is_identity() const {
  return x_mean.isZero(0.0) && u_mean.isZero(0.0) && (x_std.array() == 1.0).all() &&
         (u_std.array() == 1.0).all();
}

Vec Normalization::normalize_x(const Vec& x) const {
  return ((x - x_mean).array() / x_std.array()).matrix();
}

Vec Normalization::normalize_u(const Vec& u) const {
  return ((u - u_mean).array() / u_std.array()).matrix();
}

Vec Normalization::denormalize_x(const Vec& x) const {
  return (x.array() * x_std.array()).matrix() + x_mean;
}

DiffMaxAffineModel::DiffMaxAffineModel(int n, int m, std::vector<AffinePiece> alpha_pieces,
                                       std::vector<AffinePiece> beta_pieces, AffinePiece psi,
                                       AffinePiece phi, Vec h_alpha, Vec h_beta)
    : n_(n),
      m_(m),
      alpha_(std::move(alpha_pieces)),
      beta_(std::move(beta_pieces)),
      psi_(std::move(psi)),
      phi_(std::move(phi)),
      h_alpha_(h_alpha.size() == 0 ? Vec::Ones(n) : std::move(h_alpha)),
      h_beta_(h_beta.size() == 0 ? Vec::Ones(n) : std::move(h_beta)),
      norm_(Normalization::identity(n, m)) {
  require_arg(n >= 1 && m >= 0, "model needs n >= 1 and m >= 0");
  require_arg(!alpha_.empty() && !beta_.empty(), "model needs at least one piece per side");
  for (const auto& p : alpha_) require_dims(p.matches(n, m), "alpha piece shape");
  for (const auto& p : beta_) require_dims(p.matches(n, m), "beta piece shape");
  require_dims(psi_.matches(n, m), "psi shape");
  require_dims(phi_.matches(n, m), "phi shape");
  require_dims(h_alpha_.size() == n && h_beta_.size() == n, "Hessian diagonal length");
  require_arg((h_alpha_.array() > 0.0).all() && (h_beta_.array() > 0.0).all(),
              "Hessian diagonals must be strictly positive");
}

DiffMaxAffineModel DiffMaxAffineModel::with_hessians(Vec h_alpha, Vec h_beta) const {
  DiffMaxAffineModel out(n_, m_, alpha_, beta_, psi_, phi_, std::move(h_alpha),
                         std::move(h_beta));
  out.norm_ = norm_;
  out.strict_lb_ = strict_lb_;
  out.eta_ = eta_;
  out.zeta_ = zeta_;
  return out;
}

DiffMaxAffineModel DiffMaxAffineModel::with_normalization(Normalization norm) const {
  require_dims(norm.x_mean.size() == n_ && norm.x_std.size() == n_ &&
                   norm.u_mean.size() == m_ && norm.u_std.size() == m_,
               "normalization shape");
  require_arg((norm.x_std.array() > 0.0).all() && (norm.u_std.array() > 0.0).all(),
              "normalization std must be positive");
  DiffMaxAffineModel out = *this;
  out.norm_ = std::move(norm);
  return out;
}

DiffMaxAffineModel DiffMaxAffineModel::with_targets(AffinePiece psi, AffinePiece phi) const {
  require_dims(psi.matches(n_, m_) && phi.matches(n_, m_), "target shape");
  DiffMaxAffineModel out = *this;
  out.psi_ = std::move(psi);
  out.phi_ = std::move(phi);
  out.strict_lb_ = false;
  return out;
}

DiffMaxAffineModel DiffMaxAffineModel::with_lower_bound_tag(bool enforced, double eta,
                                                            double zeta) const {
  DiffMaxAffineModel out = *this;
  out.strict_lb_ = enforced;
  out.eta_ = eta;
  out.zeta_ = zeta;
  return out;
}

int DiffMaxAffineModel::num_params() const {
  const int per_piece = n_ * n_ + n_ * m_ + n_;
  return per_piece * (nr_alpha() + nr_beta() + 2);
}

ComponentMax eval_component_max(const std::vector<AffinePiece>& pieces, const AffinePiece& target,
                                const Vec& x, const Vec& u) {
  require_arg(!pieces.empty(), "eval_component_max needs at least one piece");
  const int n = static_cast<int>(target.c.size());
  const int m = static_cast<int>(u.size());
  require_dims(x.size() == n, "state length");
  require_dims(target.matches(n, m), "target shape");

  ComponentMax out{target.eval(x, u), std::vector<int>(n, 0)};
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    require_dims(pieces[i].matches(n, m), "piece shape");
    const Vec v = pieces[i].eval(x, u);
    for (int k = 0; k < n; ++k) {
      if (v(k) > out.value(k)) {
        out.value(k) = v(k);
        out.active[k] = static_cast<int>(i) + 1;
      }
    }
  }
  return out;
}

ForwardResult forward(const DiffMaxAffineModel& model, const Vec& x, const Vec& u) {
  require_dims(x.size() == model.n() && u.size() == model.m(), "forward input shape");
  auto a = eval_component_max(model.alpha_pieces(), model.psi(), x, u);
  auto b = eval_component_max(model.beta_pieces(), model.phi(), x, u);
  return {a.value - b.value, {std::move(a.active), std::move(b.active)}};
}

Vec predict(const DiffMaxAffineModel& model, const Vec& x, const Vec& u) {
  const auto& nz = model.normalization();
  return nz.denormalize_x(forward(model, nz.normalize_x(x), nz.normalize_u(u)).x_next);
}

ModelGradient ModelGradient::zeros_like(const DiffMaxAffineModel& model) {
  const int n = model.n(), m = model.m();
  ModelGradient g;
  g.alpha.assign(model.nr_alpha(), AffinePiece::zero(n, m));
  g.beta.assign(model.nr_beta(), AffinePiece::zero(n, m));
  g.psi = AffinePiece::zero(n, m);
  g.phi = AffinePiece::zero(n, m);
  return g;
}

namespace {

void add_into(AffinePiece& dst, const AffinePiece& src) {
  dst.A += src.A;
  dst.B += src.B;
  dst.c += src.c;
}

double piece_max_abs(const AffinePiece& p) {
  double v = 0.0;
  if (p.A.size()) v = std::max(v, p.A.cwiseAbs().maxCoeff());
  if (p.B.size()) v = std::max(v, p.B.cwiseAbs().maxCoeff());
  if (p.c.size()) v = std::max(v, p.c.cwiseAbs().maxCoeff());
  return v;
}

void accumulate_row(AffinePiece& g, int k, double weight, const Vec& x, const Vec& u) {
  g.A.row(k) += weight * x.transpose();
  g.B.row(k) += weight * u.transpose();
  g.c(k) += weight;
}

}  // namespace

ModelGradient& ModelGradient::operator+=(const ModelGradient& other) {
  for (std::size_t i = 0; i < alpha.size(); ++i) add_into(alpha[i], other.alpha[i]);
  for (std::size_t i = 0; i < beta.size(); ++i) add_into(beta[i], other.beta[i]);
  add_into(psi, other.psi);
  add_into(phi, other.phi);
  return *this;
}

double ModelGradient::max_abs() const {
  double v = std::max(piece_max_abs(psi), piece_max_abs(phi));
  for (const auto& p : alpha) v = std::max(v, piece_max_abs(p));
  for (const auto& p : beta) v = std::max(v, piece_max_abs(p));
  return v;
}

ModelGradient subgrad_params(const DiffMaxAffineModel& model, const Vec& x, const Vec& u,
                             const Vec& upstream) {
  require_dims(upstream.size() == model.n(), "upstream length");
  const auto fwd = forward(model, x, u);
  ModelGradient g = ModelGradient::zeros_like(model);
  for (int k = 0; k < model.n(); ++k) {
    const double w = upstream(k);
    const int a = fwd.active.alpha_active[k];
    accumulate_row(a == 0 ? g.psi : g.alpha[a - 1], k, w, x, u);
    const int b = fwd.active.beta_active[k];
    accumulate_row(b == 0 ? g.phi : g.beta[b - 1], k, -w, x, u);
  }
  return g;
}

DiffMaxAffineModel enforce_strict_lower_bounds(const DiffMaxAffineModel& model, double eta,
                                               double zeta) {
  require_arg(eta > 0.0 && zeta > 0.0, "eta and zeta must be positive");
  AffinePiece psi = model.alpha_pieces().front();
  psi.c.array() -= eta;
  AffinePiece phi = model.beta_pieces().front();
  phi.c.array() -= zeta;
  return model.with_targets(std::move(psi), std::move(phi)).with_lower_bound_tag(true, eta, zeta);
}

DiffMaxAffineModel denormalized(const DiffMaxAffineModel& model) {
  const auto& nz = model.normalization();
  if (nz.is_identity()) return model;
  const Vec inv_sx = nz.x_std.cwiseInverse();
  const Vec inv_su = nz.u_std.cwiseInverse();
  const Vec x_shift = nz.x_mean.cwiseProduct(inv_sx);
  const Vec u_shift = nz.u_mean.cwiseProduct(inv_su);

  auto map_piece = [&](const AffinePiece& p, bool add_mean) {
    AffinePiece q;
    q.A = nz.x_std.asDiagonal() * p.A * inv_sx.asDiagonal();
    q.B = nz.x_std.asDiagonal() * p.B * inv_su.asDiagonal();
    q.c = nz.x_std.cwiseProduct(p.c - p.A * x_shift - p.B * u_shift);
    if (add_mean) q.c += nz.x_mean;
    return q;
  };

  std::vector<AffinePiece> alpha, beta;
  for (const auto& p : model.alpha_pieces()) alpha.push_back(map_piece(p, true));
  for (const auto& p : model.beta_pieces()) beta.push_back(map_piece(p, false));
  DiffMaxAffineModel out(model.n(), model.m(), std::move(alpha), std::move(beta),
                         map_piece(model.psi(), true), map_piece(model.phi(), false),
                         model.h_alpha(), model.h_beta());
  return out.with_lower_bound_tag(model.strict_lower_bounds(), model.eta(), model.zeta());
}

namespace {

void write_piece(const AffinePiece& p, Vec& out, int& pos) {
  for (int r = 0; r < p.A.rows(); ++r)
    for (int c = 0; c < p.A.cols(); ++c) out(pos++) = p.A(r, c);
  for (int r = 0; r < p.B.rows(); ++r)
    for (int c = 0; c < p.B.cols(); ++c) out(pos++) = p.B(r, c);
  for (int r = 0; r < p.c.size(); ++r) out(pos++) = p.c(r);
}

void read_piece(AffinePiece& p, const Vec& in, int& pos) {
  for (int r = 0; r < p.A.rows(); ++r)
    for (int c = 0; c < p.A.cols(); ++c) p.A(r, c) = in(pos++);
  for (int r = 0; r < p.B.rows(); ++r)
    for (int c = 0; c < p.B.cols(); ++c) p.B(r, c) = in(pos++);
  for (int r = 0; r < p.c.size(); ++r) p.c(r) = in(pos++);
}

}  // namespace

Vec pack_params(const DiffMaxAffineModel& model) {
  Vec out(model.num_params());
  int pos = 0;
  for (const auto& p : model.alpha_pieces()) write_piece(p, out, pos);
  for (const auto& p : model.beta_pieces()) write_piece(p, out, pos);
  write_piece(model.psi(), out, pos);
  write_piece(model.phi(), out, pos);
  return out;
}

DiffMaxAffineModel unpack_params(const DiffMaxAffineModel& shape, const Vec& theta) {
  require_dims(theta.size() == shape.num_params(), "parameter vector length");
  auto alpha = shape.alpha_pieces();
  auto beta = shape.beta_pieces();
  AffinePiece psi = shape.psi(), phi = shape.phi();
  int pos = 0;
  for (auto& p : alpha) read_piece(p, theta, pos);
  for (auto& p : beta) read_piece(p, theta, pos);
  read_piece(psi, theta, pos);
  read_piece(phi, theta, pos);
  DiffMaxAffineModel out(shape.n(), shape.m(), std::move(alpha), std::move(beta), std::move(psi),
                         std::move(phi), shape.h_alpha(), shape.h_beta());
  return out.with_normalization(shape.normalization());
}

Vec pack_gradient(const ModelGradient& grad) {
  int total = 0;
  auto count = [](const AffinePiece& p) {
    return static_cast<int>(p.A.size() + p.B.size() + p.c.size());
  };
  for (const auto& p : grad.alpha) total += count(p);
  for (const auto& p : grad.beta) total += count(p);
  total += count(grad.psi) + count(grad.phi);
  Vec out(total);
  int pos = 0;
  for (const auto& p : grad.alpha) write_piece(p, out, pos);
  for (const auto& p : grad.beta) write_piece(p, out, pos);
  write_piece(grad.psi, out, pos);
  write_piece(grad.phi, out, pos);
  return out;
}

Mat stack_pieces(const std::vector<AffinePiece>& pieces, int n, int m) {
  const int nr = static_cast<int>(pieces.size());
  Mat out(n * nr, n + m + 1);
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < nr; ++i) {
      const auto& p = pieces[i];
      out.block(k * nr + i, 0, 1, n) = p.A.row(k);
      out.block(k * nr + i, n, 1, m) = p.B.row(k);
      out(k * nr + i, n + m) = p.c(k);
    }
  }
  return out;
}

}  // namespace hybridid
