#pragma once

// Datasets, the ridge-regularized one-step training objective, a multi-start
// first-order trainer and the BFR/RMS metrics.

#include <cstdint>
#include <string>
#include <vector>

#include "hybridid/common.hpp"
#include "hybridid/model.hpp"

namespace hybridid {

/// N triplets (x, u, x⁺) stored column-wise.
struct Dataset {
  Mat X;       // n×N
  Mat U;       // m×N
  Mat X_next;  // n×N
  Box domain;  // over col(x, u)
  Normalization stats;
  std::uint64_t seed{0};

  [[nodiscard]] int n() const { return static_cast<int>(X.rows()); }
  [[nodiscard]] int m() const { return static_cast<int>(U.rows()); }
  [[nodiscard]] int size() const { return static_cast<int>(X.cols()); }

  /// Builds a dataset and derives the domain box (min/max inflated by 5%)
  /// and z-score statistics. Constant dimensions get unit deviation.
  static Dataset from_columns(Mat X, Mat U, Mat X_next, std::uint64_t seed = 0);

  /// Columns [begin, begin + count), with domain and statistics recomputed.
  [[nodiscard]] Dataset slice(int begin, int count) const;
};

/// Per-dimension z-score statistics over states (x and x⁺ share them) and inputs.
[[nodiscard]] Normalization compute_normalization(const Mat& X, const Mat& U);

struct TrainConfig {
  int nr_alpha{7};
  int nr_beta{7};
  double lambda_reg{0.01};
  int restarts{10};
  int max_epochs{600};
  int batch_size{100};
  double step_size{0.01};      // initial Adam step, cosine-decayed to zero
  double init_scale{0.1};
  double validation_fraction{0.2};
  double eta{1.0};
  double zeta{1.0};
  std::uint64_t seed{1};
  int threads{0};  // 0 = hardware concurrency
  /// Full-batch gradient steps with backtracking; the accepted losses never increase.
  bool monotone_line_search{false};
  bool record_history{false};

  void validate() const;
};

struct RestartResult {
  int index{0};
  bool ok{false};
  std::string diagnostic;
  double train_loss{0.0};       // objective incl. regularization, training split
  double validation_mse{0.0};   // mean ‖x̃⁺ − pred‖² in normalized units
  std::vector<double> history;  // per epoch (or per accepted step), when recorded
};

struct FitReport {
  double bfr{0.0};  // one-step, validation split, physical units
  double rms{0.0};
  std::vector<double> per_restart_losses;  // validation MSE, NaN for failed restarts
  int best_restart{-1};
  double train_seconds{0.0};
  double lambda_reg{0.0};
  int nr_alpha{0};
  int nr_beta{0};
  int restarts{0};
  int train_size{0};
  int validation_size{0};
  std::vector<std::string> diagnostics;
};

struct TrainResult {
  DiffMaxAffineModel model;
  FitReport report;
  /// Enforced model of every restart (failed restarts hold their last finite iterate).
  std::vector<DiffMaxAffineModel> restart_models;
  std::vector<RestartResult> restarts;
};

/// (1/N) Σ ‖x̃⁺ − forward(model, x̃, ũ)‖² + λ‖θ‖², with tildes denoting the
/// model's own normalization (identity normalization gives the raw formula).
[[nodiscard]] double loss(const DiffMaxAffineModel& model, const Dataset& data, double lambda_reg);

/// Gradient of `loss` w.r.t. pack_params(model) (ψ/φ treated as free).
[[nodiscard]] Vec loss_gradient(const DiffMaxAffineModel& model, const Dataset& data,
                                double lambda_reg);

/// Multi-start training. The first (1 − validation_fraction) of the samples
/// train, the rest validate. During training ψ/φ stay tied to α₁ − η and
/// β₁ − ζ, so the returned (enforced) model is exactly the optimized one.
/// The ridge term therefore covers the pieces only.
[[nodiscard]] TrainResult train(const TrainConfig& config, const Dataset& data);

/// 1 − ‖X̂ − X‖_F / ‖X − X̄‖_F, clamped to [0, 1].
[[nodiscard]] double bfr(const Mat& X_hat, const Mat& X);
/// sqrt( (1/N) Σ ‖x̂ − x‖² ) over columns.
[[nodiscard]] double rms(const Mat& X_hat, const Mat& X);

struct Rollout {
  Mat X;  // n×(steps+1), physical units, column 0 is x0
  bool diverged{false};
  std::string diagnostic;
};

/// x_{k+1} = predict(model, x_k, u_k) for each column of U. Stops at the
/// first non-finite state (the trajectory is truncated there).
[[nodiscard]] Rollout open_loop_rollout(const DiffMaxAffineModel& model, const Vec& x0,
                                        const Mat& U);

struct OpenLoopScore {
  double bfr{0.0};  // 0 for a divergent rollout
  double rms{0.0};  // +inf for a divergent rollout
  bool diverged{false};
  Mat X_hat;  // n×(steps+1), truncated on divergence
};

/// Simulates from X.col(0) under U (m×steps) and compares columns 1..steps with X.
[[nodiscard]] OpenLoopScore open_loop_score(const DiffMaxAffineModel& model, const Mat& X,
                                            const Mat& U);

/// Median of a non-empty sample (mean of the middle pair for even sizes).
[[nodiscard]] double median(std::vector<double> values);

/// One-step predictions for every sample, physical units.
[[nodiscard]] Mat predict_all(const DiffMaxAffineModel& model, const Dataset& data);

}  // namespace hybridid
