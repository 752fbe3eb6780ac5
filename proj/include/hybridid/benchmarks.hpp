#pragma once

// Data-generating systems: the random clipped-PWA system and a two-tank
// cascade, plus excitation signals and dataset generation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "hybridid/common.hpp"
#include "hybridid/identification.hpp"

namespace hybridid {

/// Componentwise min(hi, max(lo, v)).
[[nodiscard]] Vec clip(const Vec& v, double lo, double hi);

/// x⁺ = A x + B u + W_A clip_[lo,hi](W_B x), n = 4, m = 2.
struct SigmaPwaSystem {
  Mat A, B, W_A, W_B;
  double clip_lo{0.0};
  double clip_hi{2.0};
  std::uint64_t seed{0};
  int redraws{0};  // rejected A draws before ρ(A) < 1

  /// A ~ U(0,1) (redrawn until its spectral radius is below one),
  /// B ~ U(0,1/3), W_A, W_B ~ N(0, 0.5²).
  static SigmaPwaSystem generate(std::uint64_t seed);
};

[[nodiscard]] Vec sigma_pwa_step(const SigmaPwaSystem& sys, const Vec& x, const Vec& u);

/// Two tanks in cascade, levels h = (h₁, h₂):
///   ḣ₁ = −a₁√h₁ + b·u,   ḣ₂ = a₁√h₁ − a₂√h₂,
/// integrated with fixed-step RK4 over dt and clamped at zero.
struct TwoTankSystem {
  double a1{0.5};
  double a2{0.4};
  double b{0.5};
  double dt{1.0};
  int substeps{10};
  double u_max{2.0};

  void validate() const;
  /// Level pair at which input u is an equilibrium.
  [[nodiscard]] Vec steady_state(double u) const;
};

[[nodiscard]] Vec two_tank_step(const TwoTankSystem& sys, const Vec& h, double u);

/// A simulated plant with the ranges used to excite and initialize it.
struct Plant {
  std::string name;
  int n{0};
  int m{0};
  std::function<Vec(const Vec&, const Vec&)> step;
  Box input_range;    // excitation range for identification data
  Box initial_range;  // initial states are drawn uniformly from here
  int input_hold{1};  // excitation held for this many steps
};

[[nodiscard]] Plant make_plant(const SigmaPwaSystem& sys);
[[nodiscard]] Plant make_plant(const TwoTankSystem& sys);

/// Piecewise-constant i.i.d. uniform input, each value held for `hold` steps.
[[nodiscard]] Mat uniform_excitation(const Box& range, int steps, int hold, std::uint64_t seed);

/// r_k = center + amplitude · sin(2π Σ_{j<k} f_j), with f_j swept linearly
/// from f0 to f1 (cycles per step) over the sequence.
[[nodiscard]] Vec sine_sweep(int steps, double center, double amplitude, double f0, double f1);

/// States x_0..x_T (columns) for inputs u_0..u_{T−1}. Throws on divergence.
[[nodiscard]] Mat simulate(const Plant& plant, const Vec& x0, const Mat& U);

/// One trajectory of N steps from a random initial state under the plant's
/// uniform excitation. Gaussian noise of standard deviation noise_sigma is
/// added to the recorded states (never to inputs).
[[nodiscard]] Dataset make_dataset(const Plant& plant, int N, double noise_sigma,
                                   std::uint64_t seed);

/// Noise-free trajectory under a fresh excitation: columns of X are x_0..x_T.
struct Trajectory {
  Mat X;
  Mat U;
};
[[nodiscard]] Trajectory make_trajectory(const Plant& plant, int steps, std::uint64_t seed);

/// Trains with nr_alpha = nr_beta = nr for each value and scores every
/// restart by open-loop BFR on the test trajectory.
struct SweepRow {
  int nr{0};
  std::vector<double> rollout_bfr;  // per restart
  double median_bfr{0.0};
  double best_bfr{0.0};
  FitReport report;
};

[[nodiscard]] std::vector<SweepRow> nr_sweep(const Dataset& data, const Trajectory& test,
                                             const TrainConfig& base, const std::vector<int>& nrs);

}  // namespace hybridid
