#pragma once

// Finite-horizon optimal control over an LC model.
//
//   min  Σ_t (x_{t+1} − r_t)ᵀQ(x_{t+1} − r_t) + u_tᵀR u_t + δ_tᵀR_δ δ_t
//        + (x_T − r_{T−1})ᵀQ_T(x_T − r_{T−1}),          δ_t = u_t − u_{t−1}
//   s.t. x_{t+1} = A x_t + B_u u_t + B_w w_t + d
//        0 ≤ s_t = E_w w_t + E_x x_t + E_u u_t + e  ⊥  w_t ≥ 0
//        u_lo ≤ u_t ≤ u_hi,   t = 0..T−1
//
// solve_mpcc follows a relaxation path w_i s_i ≤ τ (τ from 1e−1 to 1e−8),
// each stage solved by SQP, and finishes on a single complementarity branch
// with an active-set polish that flips biactive pairs with negative
// multipliers. The result is a strongly stationary point of the exact
// problem, checked by certify_stationarity in the full (u, x, w) space.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hybridid/benchmarks.hpp"
#include "hybridid/lc_model.hpp"
#include "hybridid/model.hpp"

namespace hybridid {

struct CostSpec {
  Mat Q;          // n×n, stage state weight on x_{t+1}
  Mat R;          // m×m
  Mat R_delta;    // m×m, input-rate weight
  Mat Q_T;        // n×n terminal weight on x_T (empty = zero)
  Mat reference;  // n×T, column t is the target of x_{t+1}

  /// Checks shapes, symmetry and positive semidefiniteness.
  void validate(int n, int m, int T) const;
};

struct MpccProblem {
  LCModel lc;
  int T{1};
  Vec x0;
  CostSpec cost;
  Vec u_lo, u_hi;
  Vec u_prev;  // u_{−1} for the first rate term
  /// Condition report of the LC model over the model domain, if checked.
  std::optional<ConditionReport> conditions;
  /// Closed-form model in physical units, used by the baseline and by
  /// single shooting. Must describe the same map as `lc`.
  std::optional<DiffMaxAffineModel> model;

  [[nodiscard]] int n() const { return lc.n(); }
  [[nodiscard]] int m() const { return lc.m(); }
  [[nodiscard]] int l() const { return lc.l(); }
  /// T·m + T·n + T·l (x0 is fixed and not counted).
  [[nodiscard]] int num_variables() const { return T * (m() + n() + l()); }
};

/// u_prev defaults to zero.
[[nodiscard]] MpccProblem build_mpcc(LCModel lc, CostSpec cost, Vec x0, int T, Vec u_lo, Vec u_hi,
                                     Vec u_prev = {});

enum class MpccStatus { Stationary, Feasible, Failed };
const char* to_string(MpccStatus status);

struct StageInfo {
  double tau{0.0};
  int iterations{0};
  double comp_violation{0.0};
  double objective{0.0};
  bool converged{false};
  bool kept_previous{false};  // stage result rejected to keep the violation non-increasing
};

/// Trajectories are stored one time step per row.
struct MpccSolution {
  Mat x_traj;    // (T+1)×n, row 0 is x0
  Mat u_traj;    // T×m
  Mat w_traj;    // T×l
  Mat nu;        // T×n, multipliers of x_{t+1} − (A x_t + B_u u_t + B_w w_t + d) = 0
  Mat gamma;     // T×l, multipliers of w ≥ 0
  Mat mu;        // T×l, multipliers of s ≥ 0
  Mat kappa_lo;  // T×m, multipliers of u ≥ u_lo
  Mat kappa_hi;  // T×m, multipliers of u ≤ u_hi
  double objective{0.0};
  double kkt_residual{0.0};
  double comp_violation{0.0};
  MpccStatus status{MpccStatus::Failed};
  std::vector<StageInfo> stages;  // relaxation path from the primary start
  int branch_flips{0};
  int evaluations{0};  // baseline rollouts
  std::string diagnostic;
};

struct MpccOptions {
  double tol{1e-6};
  double comp_tol{1e-8};
  std::vector<double> taus{1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8};
  int max_sqp_iter{40};
  int max_polish_rounds{60};
  /// Warm start (T×m); the box-clamped u_prev repeated when absent.
  std::optional<Mat> u_init;
  /// Extra starts from constant input sequences at evenly spaced levels of
  /// the box; the best stationary result is returned. 0 disables.
  int multistart_levels{5};
  /// One more start from a coarse DIRECT-L search with this many rollouts. 0 disables.
  int seed_evaluations{300};
};

[[nodiscard]] MpccSolution solve_mpcc(const MpccProblem& problem, const MpccOptions& opts = {});

struct Certificate {
  double residual{0.0};  // max of all KKT terms below
  double stationarity{0.0};
  double feasibility{0.0};
  double complementarity{0.0};  // max |w_i s_i|
  double multiplier_signs{0.0};
  bool pass{false};
  std::string reason;
};

/// Full-space KKT check with the solution's multipliers. Passes only if the
/// residual is within tol, the problem carries a condition report with
/// all_hold(), and the LC model came from a model with strict lower bounds.
/// Throws Error(Infeasible) when the primal point is infeasible beyond 1e−6.
[[nodiscard]] Certificate certify_stationarity(const MpccProblem& problem,
                                               const MpccSolution& solution, double tol = 1e-6);

/// Cost of given trajectories ((T+1)×n states, T×m inputs).
[[nodiscard]] double horizon_cost(const MpccProblem& problem, const Mat& x_traj, const Mat& u_traj);

/// Simulates the LC model over the horizon; returns (x_traj, w_traj).
[[nodiscard]] std::pair<Mat, Mat> simulate_horizon(const MpccProblem& problem, const Mat& u_traj);

struct DirectOptions {
  int max_evaluations{5000};
  double epsilon{1e-4};
};

struct DirectResult {
  Vec x;
  double f{0.0};
  int evaluations{0};
};

/// Locally biased dividing rectangles over the box [lo, hi]. Rectangle size
/// is the longest side; one rectangle per size class is a candidate.
[[nodiscard]] DirectResult direct_l(const std::function<double(const Vec&)>& f, const Vec& lo,
                                    const Vec& hi, const DirectOptions& opts = {});

/// Derivative-free baseline: DIRECT-L over the stacked inputs, states
/// eliminated by rollouts of the closed-form model (or the LC model when no
/// closed form is attached).
[[nodiscard]] MpccSolution baseline_solver(const MpccProblem& problem, const DirectOptions& opts = {});

struct ShootingOptions {
  int max_iter{100};
  double tol{1e-12};
  std::optional<Mat> u_init;
};

/// Gauss-Newton SQP over the inputs with the closed-form model (requires
/// problem.model). The model is piecewise affine, so its Jacobians come
/// from the active pieces.
[[nodiscard]] MpccSolution solve_single_shooting(const MpccProblem& problem,
                                                 const ShootingOptions& opts = {});

enum class MpcMode { Mpcc, SingleShooting, Baseline };
const char* to_string(MpcMode mode);
[[nodiscard]] MpcMode parse_mpc_mode(const std::string& name);

struct MpcConfig {
  int T{7};
  int steps{200};
  Vec u_lo, u_hi;
  Mat Q, R, R_delta, Q_T;
  /// n×(steps + T); column j is the target of the state after input j.
  Mat reference;
  Vec u_init;  // u_{−1}; the box midpoint when empty
  MpcMode mode{MpcMode::SingleShooting};
  MpccOptions mpcc;
  DirectOptions baseline;
  ShootingOptions shooting;
};

struct MpcLog {
  Mat X;  // n×(steps+1)
  Mat U;  // m×steps
  Mat reference;
  Vec u_before;       // u_{−1} used by the first rate term
  Vec objective;      // predicted horizon cost per step
  Vec kkt_residual;   // NaN outside MPCC mode
  Vec solve_seconds;
  std::vector<std::string> events;
  double closed_loop_cost{0.0};
  int tracked_component{0};  // largest diagonal entry of Q, logged as r

  [[nodiscard]] double median_solve_seconds() const;
};

/// Receding-horizon loop: solve, apply the first input to the plant, shift
/// the warm start. A failed solve applies the previous input and is logged.
[[nodiscard]] MpcLog mpc_run(const DiffMaxAffineModel& model, const Plant& plant, const Vec& x0,
                             const MpcConfig& config);

/// Σ_k (x_{k+1} − r_k)ᵀQ(·) + u_kᵀR u_k + δ_kᵀR_δ δ_k over the logged run.
[[nodiscard]] double closed_loop_cost(const MpcLog& log, const Mat& Q, const Mat& R,
                                      const Mat& R_delta);

/// CSV with columns step,time_s,x1..xn,u1..um,r,objective,kkt_residual.
[[nodiscard]] std::string mpc_log_csv(const MpcLog& log, bool with_timing = true);

}  // namespace hybridid
