#include "hybridid/benchmarks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace hybridid {

namespace {

std::mt19937_64 stream(std::uint64_t seed, std::uint32_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), tag};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kTagSystem = 11, kTagInitial = 12, kTagInput = 13, kTagNoise = 14;

double spectral_radius(const Mat& A) {
  return Eigen::EigenSolver<Mat>(A, false).eigenvalues().cwiseAbs().maxCoeff();
}

Vec uniform_in(const Box& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ud(0.0, 1.0);
  Vec v(box.lo.size());
  for (int i = 0; i < v.size(); ++i) v(i) = box.lo(i) + ud(rng) * (box.hi(i) - box.lo(i));
  return v;
}

}  // namespace

Vec clip(const Vec& v, double lo, double hi) {
  require_arg(lo <= hi, "clip bounds must satisfy lo <= hi");
  return v.cwiseMax(lo).cwiseMin(hi);
}

SigmaPwaSystem SigmaPwaSystem::generate(std::uint64_t seed) {
  auto rng = stream(seed, kTagSystem);
  std::uniform_real_distribution<double> ua(0.0, 1.0), ub(0.0, 1.0 / 3.0);
  std::normal_distribution<double> nw(0.0, 0.5);
  auto fill = [&](Mat& M, int r, int c, auto& dist) {
    M.resize(r, c);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) M(i, j) = dist(rng);
  };
  SigmaPwaSystem sys;
  sys.seed = seed;
  for (;;) {
    fill(sys.A, 4, 4, ua);
    if (spectral_radius(sys.A) < 1.0) break;
    ++sys.redraws;
  }
  fill(sys.B, 4, 2, ub);
  fill(sys.W_A, 4, 4, nw);
  fill(sys.W_B, 4, 4, nw);
  return sys;
}

Vec sigma_pwa_step(const SigmaPwaSystem& sys, const Vec& x, const Vec& u) {
  require_dims(x.size() == sys.A.rows() && u.size() == sys.B.cols(), "sigma-pwa step dimensions");
  return sys.A * x + sys.B * u + sys.W_A * clip(sys.W_B * x, sys.clip_lo, sys.clip_hi);
}

void TwoTankSystem::validate() const {
  require_arg(a1 > 0.0 && a2 > 0.0 && b > 0.0, "tank coefficients must be positive");
  require_arg(dt > 0.0 && substeps >= 1, "tank integrator settings");
  require_arg(u_max > 0.0, "tank u_max must be positive");
}

Vec TwoTankSystem::steady_state(double u) const {
  const double q = b * u;
  return Vec{{(q / a1) * (q / a1), (q / a2) * (q / a2)}};
}

Vec two_tank_step(const TwoTankSystem& sys, const Vec& h, double u) {
  require_dims(h.size() == 2, "two-tank state has two levels");
  require_arg(u >= 0.0, "two-tank input must be nonnegative");
  require_arg(u <= sys.u_max, "two-tank input above u_max");
  auto rhs = [&](const Vec& s) {
    const double r1 = std::sqrt(std::max(s(0), 0.0));
    const double r2 = std::sqrt(std::max(s(1), 0.0));
    return Vec{{-sys.a1 * r1 + sys.b * u, sys.a1 * r1 - sys.a2 * r2}};
  };
  const double dt = sys.dt / sys.substeps;
  Vec s = h.cwiseMax(0.0);
  for (int i = 0; i < sys.substeps; ++i) {
    const Vec k1 = rhs(s);
    const Vec k2 = rhs(s + 0.5 * dt * k1);
    const Vec k3 = rhs(s + 0.5 * dt * k2);
    const Vec k4 = rhs(s + dt * k3);
    s += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    s = s.cwiseMax(0.0);
  }
  return s;
}

Plant make_plant(const SigmaPwaSystem& sys) {
  Plant p;
  p.name = "sigma-pwa";
  p.n = 4;
  p.m = 2;
  p.step = [sys](const Vec& x, const Vec& u) { return sigma_pwa_step(sys, x, u); };
  p.input_range = {Vec::Constant(2, -1.0), Vec::Constant(2, 1.0)};
  p.initial_range = {Vec::Constant(4, -1.0), Vec::Constant(4, 1.0)};
  return p;
}

Plant make_plant(const TwoTankSystem& sys) {
  sys.validate();
  Plant p;
  p.name = "two-tank";
  p.n = 2;
  p.m = 1;
  p.step = [sys](const Vec& h, const Vec& u) { return two_tank_step(sys, h, u(0)); };
  p.input_range = {Vec::Constant(1, 0.85), Vec::Constant(1, 1.3)};
  p.initial_range = {sys.steady_state(0.9), sys.steady_state(1.25)};
  p.input_hold = 4;
  return p;
}

Mat uniform_excitation(const Box& range, int steps, int hold, std::uint64_t seed) {
  require_arg(steps >= 0 && hold >= 1, "excitation length and hold");
  auto rng = stream(seed, kTagInput);
  Mat U(range.lo.size(), steps);
  Vec current;
  for (int k = 0; k < steps; ++k) {
    if (k % hold == 0) current = uniform_in(range, rng);
    U.col(k) = current;
  }
  return U;
}

Vec sine_sweep(int steps, double center, double amplitude, double f0, double f1) {
  require_arg(steps >= 1, "sweep length");
  Vec r(steps);
  double phase = 0.0;
  for (int k = 0; k < steps; ++k) {
    r(k) = center + amplitude * std::sin(2.0 * M_PI * phase);
    const double f = steps > 1 ? f0 + (f1 - f0) * k / (steps - 1) : f0;
    phase += f;
  }
  return r;
}

Mat simulate(const Plant& plant, const Vec& x0, const Mat& U) {
  require_dims(x0.size() == plant.n && U.rows() == plant.m, "simulation dimensions");
  Mat X(plant.n, U.cols() + 1);
  X.col(0) = x0;
  for (int k = 0; k < U.cols(); ++k) {
    X.col(k + 1) = plant.step(X.col(k), U.col(k));
    if (!X.col(k + 1).allFinite() || X.col(k + 1).cwiseAbs().maxCoeff() > 1e8)
      throw Error(ErrorCode::Divergence,
                  plant.name + " trajectory diverged at step " + std::to_string(k + 1) +
                      "; regenerate the system with another seed");
  }
  return X;
}

Dataset make_dataset(const Plant& plant, int N, double noise_sigma, std::uint64_t seed) {
  require_arg(N >= 1, "dataset size must be >= 1");
  require_arg(noise_sigma >= 0.0, "noise sigma must be >= 0");
  auto init_rng = stream(seed, kTagInitial);
  const Vec x0 = uniform_in(plant.initial_range, init_rng);
  const Mat U = uniform_excitation(plant.input_range, N, plant.input_hold, seed);
  Mat X = simulate(plant, x0, U);
  if (noise_sigma > 0.0) {
    auto noise_rng = stream(seed, kTagNoise);
    std::normal_distribution<double> nd(0.0, noise_sigma);
    for (int j = 0; j < X.cols(); ++j)
      for (int i = 0; i < X.rows(); ++i) X(i, j) += nd(noise_rng);
  }
  return Dataset::from_columns(X.leftCols(N), U, X.rightCols(N), seed);
}

Trajectory make_trajectory(const Plant& plant, int steps, std::uint64_t seed) {
  auto init_rng = stream(seed, kTagInitial);
  Trajectory t;
  const Vec x0 = uniform_in(plant.initial_range, init_rng);
  t.U = uniform_excitation(plant.input_range, steps, plant.input_hold, seed);
  t.X = simulate(plant, x0, t.U);
  return t;
}

std::vector<SweepRow> nr_sweep(const Dataset& data, const Trajectory& test,
                               const TrainConfig& base, const std::vector<int>& nrs) {
  require_arg(!nrs.empty(), "sweep needs at least one nr value");
  std::vector<SweepRow> rows;
  for (int nr : nrs) {
    TrainConfig cfg = base;
    cfg.nr_alpha = cfg.nr_beta = nr;
    const auto res = train(cfg, data);
    SweepRow row;
    row.nr = nr;
    row.report = res.report;
    for (std::size_t r = 0; r < res.restart_models.size(); ++r)
      if (res.restarts[r].ok) row.rollout_bfr.push_back(open_loop_score(res.restart_models[r], test.X, test.U).bfr);
    row.median_bfr = median(row.rollout_bfr);
    row.best_bfr = *std::max_element(row.rollout_bfr.begin(), row.rollout_bfr.end());
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace hybridid
