#include "hybridid/identification.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

namespace hybridid {

namespace {

constexpr double kInflate = 0.05;

Box inflated_box(const Mat& X, const Mat& U) {
  const int n = static_cast<int>(X.rows()), m = static_cast<int>(U.rows());
  Box box{Vec(n + m), Vec(n + m)};
  for (int i = 0; i < n + m; ++i) {
    const auto row = i < n ? X.row(i) : U.row(i - n);
    const double lo = row.minCoeff(), hi = row.maxCoeff();
    const double width = hi - lo;
    const double pad = width > 0.0 ? kInflate * width : kInflate * std::max(std::abs(lo), 1.0);
    box.lo(i) = lo - pad;
    box.hi(i) = hi + pad;
  }
  return box;
}

void row_stats(const Mat& M, Vec& mean, Vec& sd) {
  const auto N = static_cast<double>(M.cols());
  mean = M.rowwise().mean();
  sd.resize(M.rows());
  for (int i = 0; i < M.rows(); ++i) {
    const double var = (M.row(i).array() - mean(i)).square().sum() / N;
    sd(i) = var > 0.0 ? std::sqrt(var) : 1.0;
  }
}

}  // namespace

Normalization compute_normalization(const Mat& X, const Mat& U) {
  require_arg(X.cols() >= 1 && X.cols() == U.cols(), "normalization needs matching samples");
  Normalization nz;
  row_stats(X, nz.x_mean, nz.x_std);
  row_stats(U, nz.u_mean, nz.u_std);
  return nz;
}

Dataset Dataset::from_columns(Mat X, Mat U, Mat X_next, std::uint64_t seed) {
  require_arg(X.cols() >= 1, "dataset needs at least one sample");
  require_dims(U.cols() == X.cols() && X_next.cols() == X.cols(), "dataset column counts");
  require_dims(X_next.rows() == X.rows(), "x and x_next dimensions");
  require_arg(X.allFinite() && U.allFinite() && X_next.allFinite(), "dataset has non-finite values");
  Dataset d;
  d.domain = inflated_box(X, U);
  d.stats = compute_normalization(X, U);
  d.X = std::move(X);
  d.U = std::move(U);
  d.X_next = std::move(X_next);
  d.seed = seed;
  return d;
}

Dataset Dataset::slice(int begin, int count) const {
  require_arg(begin >= 0 && count >= 1 && begin + count <= size(), "dataset slice range");
  return from_columns(X.middleCols(begin, count), U.middleCols(begin, count),
                      X_next.middleCols(begin, count), seed);
}

void TrainConfig::validate() const {
  require_arg(nr_alpha >= 1 && nr_beta >= 1, "nr_alpha and nr_beta must be >= 1");
  require_arg(lambda_reg >= 0.0, "lambda_reg must be >= 0");
  require_arg(restarts >= 1, "restarts must be >= 1");
  require_arg(max_epochs >= 1, "max_epochs must be >= 1");
  require_arg(batch_size >= 1, "batch_size must be >= 1");
  require_arg(step_size > 0.0, "step_size must be positive");
  require_arg(init_scale > 0.0, "init_scale must be positive");
  require_arg(validation_fraction >= 0.0 && validation_fraction < 1.0,
              "validation_fraction must lie in [0, 1)");
  require_arg(eta > 0.0 && zeta > 0.0, "eta and zeta must be positive");
}

// ---------------------------------------------------------------------------
// Objective on an arbitrary model (reference implementation, also the oracle
// the trainer's fast path is tested against).

double loss(const DiffMaxAffineModel& model, const Dataset& data, double lambda_reg) {
  require_dims(data.n() == model.n() && data.m() == model.m(), "model/dataset dimensions");
  const auto& nz = model.normalization();
  double sum = 0.0;
  for (int i = 0; i < data.size(); ++i) {
    const Vec x = nz.normalize_x(data.X.col(i));
    const Vec u = nz.normalize_u(data.U.col(i));
    const Vec y = nz.normalize_x(data.X_next.col(i));
    sum += (y - forward(model, x, u).x_next).squaredNorm();
  }
  return sum / data.size() + lambda_reg * pack_params(model).squaredNorm();
}

Vec loss_gradient(const DiffMaxAffineModel& model, const Dataset& data, double lambda_reg) {
  require_dims(data.n() == model.n() && data.m() == model.m(), "model/dataset dimensions");
  const auto& nz = model.normalization();
  auto grad = ModelGradient::zeros_like(model);
  for (int i = 0; i < data.size(); ++i) {
    const Vec x = nz.normalize_x(data.X.col(i));
    const Vec u = nz.normalize_u(data.U.col(i));
    const Vec y = nz.normalize_x(data.X_next.col(i));
    const Vec r = forward(model, x, u).x_next - y;
    grad += subgrad_params(model, x, u, (2.0 / data.size()) * r);
  }
  return pack_gradient(grad) + 2.0 * lambda_reg * pack_params(model);
}

// ---------------------------------------------------------------------------
// Trainer. Pieces live in stacked form (row k·r + i = [A_i row k, B_i row k,
// c_i,k]) acting on z = [x̃; ũ; 1].

namespace {

struct Stacked {
  Mat Pa, Pb;
};

class Objective {
 public:
  Objective(const Mat& Z, const Mat& Y, int n, int ra, int rb, double lambda)
      : Z_(Z), Y_(Y), n_(n), ra_(ra), rb_(rb), lambda_(lambda) {}

  [[nodiscard]] int d() const { return static_cast<int>(Z_.rows()); }

  // Mean squared error over the listed columns; gradient accumulated if requested.
  double mse(const Stacked& P, const int* idx, int count, Stacked* grad) const {
    Mat Zb(d(), count), Yb(n_, count);
    for (int j = 0; j < count; ++j) {
      Zb.col(j) = Z_.col(idx[j]);
      Yb.col(j) = Y_.col(idx[j]);
    }
    const Mat Va = P.Pa * Zb;
    const Mat Vb = P.Pb * Zb;
    double sum = 0.0;
    if (grad) {
      grad->Pa.setZero(P.Pa.rows(), P.Pa.cols());
      grad->Pb.setZero(P.Pb.rows(), P.Pb.cols());
    }
    for (int j = 0; j < count; ++j) {
      for (int k = 0; k < n_; ++k) {
        int ia = 0, ib = 0;
        for (int i = 1; i < ra_; ++i)
          if (Va(k * ra_ + i, j) > Va(k * ra_ + ia, j)) ia = i;
        for (int i = 1; i < rb_; ++i)
          if (Vb(k * rb_ + i, j) > Vb(k * rb_ + ib, j)) ib = i;
        const double r = Va(k * ra_ + ia, j) - Vb(k * rb_ + ib, j) - Yb(k, j);
        sum += r * r;
        if (grad) {
          const double g = 2.0 * r / count;
          grad->Pa.row(k * ra_ + ia) += g * Zb.col(j).transpose();
          grad->Pb.row(k * rb_ + ib) -= g * Zb.col(j).transpose();
        }
      }
    }
    return sum / count;
  }

  // λ‖θ‖² over the trainable pieces; ψ/φ are derived from them here.
  double reg(const Stacked& P, Stacked* grad) const {
    if (lambda_ == 0.0) return 0.0;
    if (grad) {
      grad->Pa += 2.0 * lambda_ * P.Pa;
      grad->Pb += 2.0 * lambda_ * P.Pb;
    }
    return lambda_ * (P.Pa.squaredNorm() + P.Pb.squaredNorm());
  }

  double objective(const Stacked& P, const std::vector<int>& idx, Stacked* grad) const {
    double f = mse(P, idx.data(), static_cast<int>(idx.size()), grad);
    f += reg(P, grad);
    return f;
  }

 private:
  const Mat& Z_;
  const Mat& Y_;
  int n_, ra_, rb_;
  double lambda_;
};

DiffMaxAffineModel to_model(const Stacked& P, int n, int m, const TrainConfig& cfg,
                            const Normalization& nz) {
  auto unstack = [&](const Mat& S, int r) {
    std::vector<AffinePiece> pieces;
    for (int i = 0; i < r; ++i) {
      AffinePiece p = AffinePiece::zero(n, m);
      for (int k = 0; k < n; ++k) {
        const auto row = S.row(k * r + i);
        p.A.row(k) = row.head(n);
        p.B.row(k) = row.segment(n, m);
        p.c(k) = row(n + m);
      }
      pieces.push_back(std::move(p));
    }
    return pieces;
  };
  DiffMaxAffineModel raw(n, m, unstack(P.Pa, cfg.nr_alpha), unstack(P.Pb, cfg.nr_beta),
                         AffinePiece::zero(n, m), AffinePiece::zero(n, m));
  return enforce_strict_lower_bounds(raw.with_normalization(nz), cfg.eta, cfg.zeta);
}

bool finite(const Stacked& P) { return P.Pa.allFinite() && P.Pb.allFinite(); }

struct RestartOutput {
  RestartResult result;
  Stacked params;
};

RestartOutput run_adam(const Objective& obj, const std::vector<int>& train_idx,
                       const TrainConfig& cfg, std::mt19937_64& rng, Stacked P) {
  RestartOutput out;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  Stacked m1{Mat::Zero(P.Pa.rows(), P.Pa.cols()), Mat::Zero(P.Pb.rows(), P.Pb.cols())};
  Stacked m2 = m1;
  Stacked g;
  std::vector<int> order = train_idx;
  const int N = static_cast<int>(order.size());
  const int bs = std::min(cfg.batch_size, N);
  long t = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double lr = cfg.step_size * 0.5 * (1.0 + std::cos(M_PI * epoch / cfg.max_epochs));
    std::shuffle(order.begin(), order.end(), rng);
    for (int b = 0; b < N; b += bs) {
      const int count = std::min(bs, N - b);
      obj.mse(P, order.data() + b, count, &g);
      obj.reg(P, &g);
      ++t;
      const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
      const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
      auto update = [&](Mat& p, Mat& mm, Mat& vv, const Mat& gg) {
        mm = b1 * mm + (1.0 - b1) * gg;
        vv = b2 * vv + (1.0 - b2) * gg.cwiseAbs2();
        p.array() -= lr * (mm.array() / c1) / ((vv.array() / c2).sqrt() + eps);
      };
      update(P.Pa, m1.Pa, m2.Pa, g.Pa);
      update(P.Pb, m1.Pb, m2.Pb, g.Pb);
    }
    if (!finite(P)) {
      out.result.diagnostic = "non-finite parameters at epoch " + std::to_string(epoch);
      return out;
    }
    if (cfg.record_history) {
      const double f = obj.objective(P, train_idx, nullptr);
      out.result.history.push_back(f);
      if (!std::isfinite(f)) {
        out.result.diagnostic = "non-finite loss at epoch " + std::to_string(epoch);
        return out;
      }
    }
  }
  out.result.ok = true;
  out.params = std::move(P);
  return out;
}

RestartOutput run_monotone(const Objective& obj, const std::vector<int>& train_idx,
                           const TrainConfig& cfg, Stacked P) {
  RestartOutput out;
  Stacked g;
  double f = obj.objective(P, train_idx, &g);
  if (cfg.record_history) out.result.history.push_back(f);
  double step = cfg.step_size;
  for (int it = 0; it < cfg.max_epochs && std::isfinite(f); ++it) {
    const double gg = g.Pa.squaredNorm() + g.Pb.squaredNorm();
    if (gg == 0.0) break;
    bool accepted = false;
    while (step > 1e-14) {
      Stacked trial{P.Pa - step * g.Pa, P.Pb - step * g.Pb};
      Stacked g_trial;
      const double f_trial = obj.objective(trial, train_idx, &g_trial);
      if (std::isfinite(f_trial) && f_trial <= f - 1e-4 * step * gg) {
        P = std::move(trial);
        g = std::move(g_trial);
        f = f_trial;
        step *= 2.0;
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (cfg.record_history) out.result.history.push_back(f);
  }
  if (!std::isfinite(f)) {
    out.result.diagnostic = "non-finite loss";
    return out;
  }
  out.result.ok = true;
  out.params = std::move(P);
  return out;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const Dataset& data) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const int n = data.n(), m = data.m(), N = data.size();
  int n_val = static_cast<int>(std::lround(N * cfg.validation_fraction));
  if (N - n_val < 1) n_val = 0;
  const int n_train = N - n_val;

  const Normalization nz =
      compute_normalization(data.X.leftCols(n_train), data.U.leftCols(n_train));
  const int d = n + m + 1;
  Mat Z(d, N), Y(n, N);
  for (int i = 0; i < N; ++i) {
    Z.col(i) << nz.normalize_x(data.X.col(i)), nz.normalize_u(data.U.col(i)), 1.0;
    Y.col(i) = nz.normalize_x(data.X_next.col(i));
  }
  std::vector<int> train_idx(n_train), val_idx(n_val);
  std::iota(train_idx.begin(), train_idx.end(), 0);
  std::iota(val_idx.begin(), val_idx.end(), n_train);
  const std::vector<int>& score_idx = n_val > 0 ? val_idx : train_idx;

  const Objective obj(Z, Y, n, cfg.nr_alpha, cfg.nr_beta, cfg.lambda_reg);

  std::vector<RestartOutput> outputs(cfg.restarts);
  auto work = [&](int r) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(r), 0x1d5eedu};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> nd(0.0, cfg.init_scale);
    Stacked P{Mat(n * cfg.nr_alpha, d), Mat(n * cfg.nr_beta, d)};
    for (int i = 0; i < P.Pa.size(); ++i) P.Pa.data()[i] = nd(rng);
    for (int i = 0; i < P.Pb.size(); ++i) P.Pb.data()[i] = nd(rng);
    const Stacked init = P;
    RestartOutput out = cfg.monotone_line_search ? run_monotone(obj, train_idx, cfg, std::move(P))
                                                 : run_adam(obj, train_idx, cfg, rng, std::move(P));
    out.result.index = r;
    if (!out.result.ok) {
      out.params = init;
    } else {
      out.result.train_loss = obj.objective(out.params, train_idx, nullptr);
      out.result.validation_mse =
          obj.mse(out.params, score_idx.data(), static_cast<int>(score_idx.size()), nullptr);
      if (!std::isfinite(out.result.train_loss) || !std::isfinite(out.result.validation_mse)) {
        out.result.ok = false;
        out.result.diagnostic = "non-finite final loss";
        out.params = init;
      }
    }
    outputs[r] = std::move(out);
  };

  int threads = cfg.threads > 0 ? cfg.threads : static_cast<int>(std::thread::hardware_concurrency());
  threads = std::clamp(threads, 1, cfg.restarts);
  if (threads == 1) {
    for (int r = 0; r < cfg.restarts; ++r) work(r);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (int r = next++; r < cfg.restarts; r = next++) work(r);
      });
    for (auto& th : pool) th.join();
  }

  TrainResult res{to_model(outputs[0].params, n, m, cfg, nz), {}, {}, {}};
  FitReport& rep = res.report;
  int best = -1;
  for (int r = 0; r < cfg.restarts; ++r) {
    const auto& o = outputs[r];
    res.restart_models.push_back(to_model(o.params, n, m, cfg, nz));
    res.restarts.push_back(o.result);
    if (o.result.ok) {
      rep.per_restart_losses.push_back(o.result.validation_mse);
      if (best < 0 || o.result.validation_mse < outputs[best].result.validation_mse) best = r;
    } else {
      rep.per_restart_losses.push_back(std::numeric_limits<double>::quiet_NaN());
      rep.diagnostics.push_back("restart " + std::to_string(r) + ": " + o.result.diagnostic);
    }
  }
  if (best < 0) throw Error(ErrorCode::Divergence, "all training restarts failed");
  res.model = res.restart_models[best];
  rep.best_restart = best;
  rep.lambda_reg = cfg.lambda_reg;
  rep.nr_alpha = cfg.nr_alpha;
  rep.nr_beta = cfg.nr_beta;
  rep.restarts = cfg.restarts;
  rep.train_size = n_train;
  rep.validation_size = n_val;

  const int begin = n_val > 0 ? n_train : 0;
  const int count = n_val > 0 ? n_val : n_train;
  const Dataset score = data.slice(begin, count);
  const Mat pred = predict_all(res.model, score);
  rep.rms = rms(pred, score.X_next);
  try {
    rep.bfr = bfr(pred, score.X_next);
  } catch (const Error& e) {
    rep.bfr = 0.0;
    rep.diagnostics.push_back(std::string("bfr: ") + e.what());
  }
  rep.train_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

// ---------------------------------------------------------------------------

double bfr(const Mat& X_hat, const Mat& X) {
  require_dims(X_hat.rows() == X.rows() && X_hat.cols() == X.cols(), "bfr shapes");
  require_arg(X.cols() >= 1, "bfr needs samples");
  const Vec mean = X.rowwise().mean();
  const double den = (X.colwise() - mean).norm();
  if (!(den > 0.0)) throw Error(ErrorCode::DegenerateTarget, "degenerate target");
  const double ratio = (X_hat - X).norm() / den;
  return std::clamp(1.0 - ratio, 0.0, 1.0);
}

double rms(const Mat& X_hat, const Mat& X) {
  require_dims(X_hat.rows() == X.rows() && X_hat.cols() == X.cols(), "rms shapes");
  require_arg(X.cols() >= 1, "rms needs samples");
  return std::sqrt((X_hat - X).squaredNorm() / static_cast<double>(X.cols()));
}

Rollout open_loop_rollout(const DiffMaxAffineModel& model, const Vec& x0, const Mat& U) {
  require_dims(x0.size() == model.n() && U.rows() == model.m(), "rollout dimensions");
  require_arg(U.allFinite() && x0.allFinite(), "rollout inputs must be finite");
  Rollout out;
  out.X.resize(model.n(), U.cols() + 1);
  out.X.col(0) = x0;
  for (int k = 0; k < U.cols(); ++k) {
    const Vec next = predict(model, out.X.col(k), U.col(k));
    if (!next.allFinite()) {
      out.diverged = true;
      out.diagnostic = "non-finite state at step " + std::to_string(k + 1);
      out.X.conservativeResize(Eigen::NoChange, k + 1);
      return out;
    }
    out.X.col(k + 1) = next;
  }
  return out;
}

OpenLoopScore open_loop_score(const DiffMaxAffineModel& model, const Mat& X, const Mat& U) {
  require_dims(X.rows() == model.n() && U.rows() == model.m() && X.cols() == U.cols() + 1,
               "open-loop scoring needs X n×(steps+1) and U m×steps");
  require_arg(U.cols() >= 1, "open-loop scoring needs at least one step");
  OpenLoopScore s;
  auto r = open_loop_rollout(model, X.col(0), U);
  s.X_hat = std::move(r.X);
  s.diverged = r.diverged;
  if (s.diverged) {
    s.rms = std::numeric_limits<double>::infinity();
    return s;
  }
  const auto steps = U.cols();
  s.rms = rms(s.X_hat.rightCols(steps), X.rightCols(steps));
  s.bfr = bfr(s.X_hat.rightCols(steps), X.rightCols(steps));
  return s;
}

double median(std::vector<double> values) {
  require_arg(!values.empty(), "median of an empty sample");
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  return 0.5 * (*std::max_element(values.begin(), values.begin() + mid) + hi);
}

Mat predict_all(const DiffMaxAffineModel& model, const Dataset& data) {
  require_dims(data.n() == model.n() && data.m() == model.m(), "model/dataset dimensions");
  Mat out(data.n(), data.size());
  for (int i = 0; i < data.size(); ++i) out.col(i) = predict(model, data.X.col(i), data.U.col(i));
  return out;
}

}  // namespace hybridid
