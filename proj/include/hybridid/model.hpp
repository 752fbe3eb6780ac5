#pragma once

// Difference-of-max-affine hybrid model.
//
//   x⁺ = α*(x,u) − β*(x,u)
//   α*_k = max( ψ_k(x,u), max_i α_{i,k}(x,u) )
//   β*_k = max( φ_k(x,u), max_j β_{j,k}(x,u) )
//
// This is the closed-form minimizer of the pair of strictly convex QPs
//   α* = argmin ½‖α − ψ(x,u)‖²_{Hα}  s.t. α ≥ α_i(x,u) ∀i
// (and likewise for β) when Hα, Hβ are positive diagonal: the problem
// separates per component and the answer never depends on Hα or Hβ.
// qp::build_consolidated_qp gives the explicit QP form used as an oracle and
// as the source of the LC model.

#include <vector>

#include "hybridid/common.hpp"

namespace hybridid {

struct AffinePiece {
  Mat A;  // n×n
  Mat B;  // n×m
  Vec c;  // n

  static AffinePiece zero(int n, int m);

  [[nodiscard]] Vec eval(const Vec& x, const Vec& u) const { return A * x + B * u + c; }
  [[nodiscard]] bool matches(int n, int m) const;
};

/// Per-dimension z-score statistics. Model pieces live in normalized
/// coordinates; `predict` maps physical quantities through them.
struct Normalization {
  Vec x_mean, x_std;
  Vec u_mean, u_std;

  static Normalization identity(int n, int m);
  [[nodiscard]] bool is_identity() const;

  [[nodiscard]] Vec normalize_x(const Vec& x) const;
  [[nodiscard]] Vec normalize_u(const Vec& u) const;
  [[nodiscard]] Vec denormalize_x(const Vec& x) const;
};

/// Piece index per output component. 0 is the ψ/φ target, k ≥ 1 is piece k
/// (1-based, declaration order).
struct ActiveSet {
  std::vector<int> alpha_active;
  std::vector<int> beta_active;
};

class DiffMaxAffineModel {
 public:
  DiffMaxAffineModel(int n, int m, std::vector<AffinePiece> alpha_pieces,
                     std::vector<AffinePiece> beta_pieces, AffinePiece psi, AffinePiece phi,
                     Vec h_alpha = {}, Vec h_beta = {});

  [[nodiscard]] int n() const { return n_; }
  [[nodiscard]] int m() const { return m_; }
  [[nodiscard]] int nr_alpha() const { return static_cast<int>(alpha_.size()); }
  [[nodiscard]] int nr_beta() const { return static_cast<int>(beta_.size()); }

  [[nodiscard]] const std::vector<AffinePiece>& alpha_pieces() const { return alpha_; }
  [[nodiscard]] const std::vector<AffinePiece>& beta_pieces() const { return beta_; }
  [[nodiscard]] const AffinePiece& psi() const { return psi_; }
  [[nodiscard]] const AffinePiece& phi() const { return phi_; }
  [[nodiscard]] const Vec& h_alpha() const { return h_alpha_; }
  [[nodiscard]] const Vec& h_beta() const { return h_beta_; }
  [[nodiscard]] const Normalization& normalization() const { return norm_; }

  /// True once enforce_strict_lower_bounds produced the targets.
  [[nodiscard]] bool strict_lower_bounds() const { return strict_lb_; }
  [[nodiscard]] double eta() const { return eta_; }
  [[nodiscard]] double zeta() const { return zeta_; }

  [[nodiscard]] DiffMaxAffineModel with_hessians(Vec h_alpha, Vec h_beta) const;
  [[nodiscard]] DiffMaxAffineModel with_normalization(Normalization norm) const;
  [[nodiscard]] DiffMaxAffineModel with_targets(AffinePiece psi, AffinePiece phi) const;
  [[nodiscard]] DiffMaxAffineModel with_lower_bound_tag(bool enforced, double eta,
                                                        double zeta) const;

  /// Number of scalar parameters in θ (pieces and targets).
  [[nodiscard]] int num_params() const;

 private:
  int n_, m_;
  std::vector<AffinePiece> alpha_, beta_;
  AffinePiece psi_, phi_;
  Vec h_alpha_, h_beta_;
  Normalization norm_;
  bool strict_lb_{false};
  double eta_{0.0}, zeta_{0.0};
};

struct ComponentMax {
  Vec value;
  std::vector<int> active;
};

/// value_k = max(target_k, max_i piece_{i,k}); ties go to the lowest index,
/// the target counting as index 0.
[[nodiscard]] ComponentMax eval_component_max(const std::vector<AffinePiece>& pieces,
                                              const AffinePiece& target, const Vec& x,
                                              const Vec& u);

struct ForwardResult {
  Vec x_next;
  ActiveSet active;
};

/// Model-coordinate evaluation (no normalization applied).
[[nodiscard]] ForwardResult forward(const DiffMaxAffineModel& model, const Vec& x, const Vec& u);

/// Physical-unit prediction: normalize, forward, denormalize.
[[nodiscard]] Vec predict(const DiffMaxAffineModel& model, const Vec& x, const Vec& u);

/// Same shape as the model parameters.
struct ModelGradient {
  std::vector<AffinePiece> alpha;
  std::vector<AffinePiece> beta;
  AffinePiece psi;
  AffinePiece phi;

  static ModelGradient zeros_like(const DiffMaxAffineModel& model);
  ModelGradient& operator+=(const ModelGradient& other);
  [[nodiscard]] double max_abs() const;
};

/// ∂(upstreamᵀ forward(model, x, u)) / ∂θ, using the tie-broken active pieces.
[[nodiscard]] ModelGradient subgrad_params(const DiffMaxAffineModel& model, const Vec& x,
                                           const Vec& u, const Vec& upstream);

/// Replaces ψ by α₁ − η·1 and φ by β₁ − ζ·1, so the targets sit strictly
/// below the piecewise maxima everywhere.
[[nodiscard]] DiffMaxAffineModel enforce_strict_lower_bounds(const DiffMaxAffineModel& model,
                                                             double eta, double zeta);

/// Equivalent model acting directly on physical units (identity
/// normalization). Positive per-component scaling commutes with max.
[[nodiscard]] DiffMaxAffineModel denormalized(const DiffMaxAffineModel& model);

// Flat parameter vectors. Order: α pieces, β pieces, ψ, φ; inside a piece
// A row-major, B row-major, c.
[[nodiscard]] Vec pack_params(const DiffMaxAffineModel& model);
[[nodiscard]] DiffMaxAffineModel unpack_params(const DiffMaxAffineModel& shape, const Vec& theta);
[[nodiscard]] Vec pack_gradient(const ModelGradient& grad);

/// Pieces stacked component-major: row k·nr + i holds [A_i row k, B_i row k, c_i,k].
[[nodiscard]] Mat stack_pieces(const std::vector<AffinePiece>& pieces, int n, int m);

}  // namespace hybridid
