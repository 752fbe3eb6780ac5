#pragma once

// Linear complementarity form of a trained model.
//
//   x⁺ = A x + B_u u + B_w w + d
//   0 ≤ E_w w + E_x x + E_u u + e  ⊥  w ≥ 0
//
// Obtained from the KKT system of the consolidated α/β QP with W = [I −I]:
//   [A B_u] = −W Q⁻¹ R,  B_w = −W Q⁻¹ Fᵀ,  d = −W Q⁻¹ p,
//   E_w = F Q⁻¹ Fᵀ,  [E_x E_u] = F Q⁻¹ R − G,  e = F Q⁻¹ p + h.

#include <cstdint>
#include <utility>
#include <vector>

#include "hybridid/common.hpp"
#include "hybridid/model.hpp"

namespace hybridid {

/// Contiguous rows of E_w coupled to one state component on one side.
struct LcBlock {
  int begin{0};
  int size{0};
  int component{0};
  bool alpha_side{true};
};

struct LCModel {
  Mat A, B_u, B_w;
  Vec d;
  Mat E_w, E_x, E_u;
  Vec e;
  std::vector<LcBlock> blocks;
  /// Carried over from the source model (ψ/φ strictly below the maxima).
  bool strict_lower_bounds{false};

  [[nodiscard]] int n() const { return static_cast<int>(A.rows()); }
  [[nodiscard]] int m() const { return static_cast<int>(B_u.cols()); }
  [[nodiscard]] int l() const { return static_cast<int>(E_w.rows()); }

  /// Throws on inconsistent shapes.
  void validate() const;

  /// Complementarity rows reordered: new row i is old row perm[i]. Blocks
  /// are dropped since they no longer describe contiguous ranges.
  [[nodiscard]] LCModel permuted(const std::vector<int>& perm) const;
};

/// Pure-linear LC model (l = 0): x⁺ = A x + B_u u + d.
[[nodiscard]] LCModel linear_lc(Mat A, Mat B_u, Vec d);

[[nodiscard]] LCModel extract_lc(const DiffMaxAffineModel& model);

struct LcStep {
  Vec x_next;
  Vec w;
};

/// Simulates an LC model. The LCP 0 ≤ E_w w + q ⊥ w ≥ 0 with E_w = K Kᵀ is
/// the KKT system of min ½‖v‖² s.t. K v + q ≥ 0; w is read off as that QP's
/// multiplier vector. K is factored once per stepper.
class LcStepper {
 public:
  explicit LcStepper(LCModel lc);

  [[nodiscard]] LcStep step(const Vec& x, const Vec& u) const;
  /// Solves only the complementarity problem for the given affine term q.
  [[nodiscard]] Vec solve_lcp(const Vec& q) const;
  [[nodiscard]] const LCModel& lc() const { return lc_; }

 private:
  LCModel lc_;
  Mat K_;  // l×r with K Kᵀ = E_w
};

[[nodiscard]] LcStep step_lcp(const LCModel& lc, const Vec& x, const Vec& u);

struct ConditionReport {
  double cond1_max_successor_gap{0.0};
  bool cond2_block_diagonal{false};
  double cond2_off_block_mass{0.0};
  /// Strict elementwise form: diagonal E_w with positive entries.
  bool cond2_elementwise{false};
  double e_w_min_eigenvalue{0.0};
  double cond3_fraction_satisfied{0.0};
  double strict_lb_margin{0.0};
  int samples{0};

  /// Cond 1 gap ≤ 1e−8, block-diagonal PSD E_w, Cond 3 on every sample
  /// and a positive lower-bound margin.
  [[nodiscard]] bool all_hold() const;
};

using StateInput = std::pair<Vec, Vec>;

[[nodiscard]] ConditionReport check_conditions(const LCModel& lc, const DiffMaxAffineModel& model,
                                               const std::vector<StateInput>& samples);

/// Box corners (when 2^(n+m) ≤ 4096) followed by `count` uniform interior
/// points, deterministic in `seed`.
[[nodiscard]] std::vector<StateInput> sample_box(const Box& box, int n, int count,
                                                 std::uint64_t seed);

}  // namespace hybridid
