// hybridid: data generation, training, evaluation, LC extraction, OCP and
// MPC runs from the command line. Exit codes: 0 success, 1 error,
// 2 a certificate or condition check failed; CLI11 codes for usage errors.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hybridid/benchmarks.hpp"
#include "hybridid/identification.hpp"
#include "hybridid/io.hpp"
#include "hybridid/lc_model.hpp"
#include "hybridid/ocp.hpp"
#include "json_config.hpp"

using namespace hybridid;
using io::format_double;
using io::json;

namespace {

constexpr int kExitCertificate = 2;

std::string num(double v) { return format_double(v); }

std::string box_string(const Box& b) {
  std::string s;
  for (int i = 0; i < b.lo.size(); ++i)
    s += (i ? " x [" : "[") + num(b.lo(i)) + ", " + num(b.hi(i)) + "]";
  return s;
}

/// Sibling path: "dir/name.csv" + ".sys.json" → "dir/name.sys.json".
std::string sibling(const std::string& path, const std::string& suffix) {
  std::filesystem::path p(path);
  p.replace_extension();
  return p.string() + suffix;
}

// A scalar broadcast to size k, or exactly k values.
Vec broadcast(const std::vector<double>& v, int k, const std::string& name) {
  if (v.size() == 1) return Vec::Constant(k, v[0]);
  if (static_cast<int>(v.size()) == k) return Eigen::Map<const Vec>(v.data(), k);
  throw Error(ErrorCode::DimensionMismatch, name + " needs 1 or " + std::to_string(k) +
                                                " values, got " + std::to_string(v.size()));
}

Mat diag(const std::vector<double>& v, int k, const std::string& name) {
  if (v.empty()) return Mat::Zero(k, k);
  return broadcast(v, k, name).asDiagonal();
}

struct SystemChoice {
  std::string name = "sigma-pwa";
  std::string file;
  std::optional<std::uint64_t> seed;

  void add(CLI::App* cmd, bool with_seed) {
    cmd->add_option("--system", name, "Benchmark system")
        ->check(CLI::IsMember({"sigma-pwa", "two-tank"}))
        ->capture_default_str();
    cmd->add_option("--system-file", file, "System description (hybridid-sys/1); overrides --system")
        ->check(CLI::ExistingFile);
    if (with_seed) cmd->add_option("--system-seed", seed, "Seed of the random system (default: --seed)");
  }

  [[nodiscard]] io::SystemDescription load(std::uint64_t global_seed) const {
    if (!file.empty()) return io::system_from_json(io::read_json(file));
    io::SystemDescription sys;
    sys.kind = name;
    if (name == "sigma-pwa") sys.sigma_pwa = SigmaPwaSystem::generate(seed.value_or(global_seed));
    return sys;
  }
};

void add_mpcc_options(CLI::App* cmd, MpccOptions& opts) {
  cmd->add_option("--multistart-levels", opts.multistart_levels, "MPCC constant-input starts")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  cmd->add_option("--seed-evaluations", opts.seed_evaluations, "Rollouts of the MPCC DIRECT-L seed start")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
}

void add_train_options(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--nr-alpha", cfg.nr_alpha, "Pieces on the α side")->capture_default_str();
  cmd->add_option("--nr-beta", cfg.nr_beta, "Pieces on the β side")->capture_default_str();
  cmd->add_option("--lambda", cfg.lambda_reg, "Ridge weight")->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_option("--restarts", cfg.restarts)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--epochs", cfg.max_epochs)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--batch", cfg.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--step", cfg.step_size, "Initial Adam step")->capture_default_str();
  cmd->add_option("--init-scale", cfg.init_scale)->capture_default_str();
  cmd->add_option("--val-fraction", cfg.validation_fraction)->capture_default_str();
  cmd->add_option("--eta", cfg.eta, "Lower-bound margin on the α side")->capture_default_str();
  cmd->add_option("--zeta", cfg.zeta, "Lower-bound margin on the β side")->capture_default_str();
  cmd->add_option("--threads", cfg.threads, "0 = hardware concurrency")->capture_default_str();
}

std::vector<int> parse_sweep(const std::string& spec) {
  const auto eq = spec.find('=');
  if (eq == std::string::npos || spec.substr(0, eq) != "nr")
    throw Error(ErrorCode::InvalidArgument, "--sweep expects nr=v1,v2,...");
  std::vector<int> out;
  std::string rest = spec.substr(eq + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const auto comma = rest.find(',', pos);
    const auto tok = rest.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    try {
      std::size_t used = 0;
      const int v = std::stoi(tok, &used);
      if (used != tok.size() || v < 1) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidArgument, "bad nr value '" + tok + "' in --sweep");
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

json sweep_to_json(const std::vector<SweepRow>& rows, bool with_timing) {
  json out = json::array();
  for (const auto& r : rows) {
    json row{{"nr", r.nr},
             {"median_bfr", r.median_bfr},
             {"best_bfr", r.best_bfr},
             {"rollout_bfr", r.rollout_bfr},
             {"fit", io::fit_report_to_json(r.report, with_timing)}};
    out.push_back(std::move(row));
  }
  return out;
}

void print_sweep(const std::vector<SweepRow>& rows, bool open_loop) {
  std::printf("%-4s %-22s %-22s %-22s\n", "nr", open_loop ? "median_bfr" : "-",
              open_loop ? "best_bfr" : "-", "one_step_bfr");
  for (const auto& r : rows)
    std::printf("%-4d %-22s %-22s %-22s\n", r.nr, open_loop ? num(r.median_bfr).c_str() : "-",
                open_loop ? num(r.best_bfr).c_str() : "-", num(r.report.bfr).c_str());
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string s = "nr,median_bfr,best_bfr,one_step_bfr,one_step_rms\n";
  for (const auto& r : rows)
    s += std::to_string(r.nr) + "," + num(r.median_bfr) + "," + num(r.best_bfr) + "," +
         num(r.report.bfr) + "," + num(r.report.rms) + "\n";
  return s;
}

Box normalization_box(const DiffMaxAffineModel& model, double k) {
  const auto& nz = model.normalization();
  const int n = model.n(), m = model.m();
  Box b{Vec(n + m), Vec(n + m)};
  b.lo << nz.x_mean - k * nz.x_std, nz.u_mean - k * nz.u_std;
  b.hi << nz.x_mean + k * nz.x_std, nz.u_mean + k * nz.u_std;
  return b;
}

void print_conditions(const ConditionReport& rep) {
  std::cout << "cond1_max_successor_gap: " << num(rep.cond1_max_successor_gap) << "\n"
            << "cond2_block_diagonal: " << (rep.cond2_block_diagonal ? "yes" : "no") << "\n"
            << "cond2_off_block_mass: " << num(rep.cond2_off_block_mass) << "\n"
            << "cond2_elementwise: " << (rep.cond2_elementwise ? "yes" : "no") << "\n"
            << "e_w_min_eigenvalue: " << num(rep.e_w_min_eigenvalue) << "\n"
            << "cond3_fraction_satisfied: " << num(rep.cond3_fraction_satisfied) << "\n"
            << "strict_lb_margin: " << num(rep.strict_lb_margin) << "\n"
            << "samples: " << rep.samples << "\n"
            << "conditions: " << (rep.all_hold() ? "hold" : "NOT verified") << "\n";
}

// ---------------------------------------------------------------------------

struct GenData {
  SystemChoice system;
  int n{5000};
  double noise{0.01};
  std::string out, system_out;
};

int run_gen_data(const GenData& o, std::uint64_t seed) {
  const auto sys = o.system.load(seed);
  const auto plant = sys.plant();
  const auto data = make_dataset(plant, o.n, o.noise, seed);
  io::save_dataset(o.out, data);
  const std::string sys_path = o.system_out.empty() ? sibling(o.out, ".sys.json") : o.system_out;
  io::write_json(sys_path, io::system_to_json(sys));
  std::cout << "system: " << sys.kind << "\n"
            << "N: " << data.size() << "\n"
            << "domain: " << box_string(data.domain) << "\n"
            << "noise_sigma: " << num(o.noise) << "\n";
  if (sys.kind == "sigma-pwa")
    std::cout << "stability_redraws: " << sys.sigma_pwa.redraws << "\n";
  std::cout << "wrote: " << o.out << ", " << sys_path << "\n";
  return 0;
}

struct Train {
  std::string data, out, report, sweep;
  TrainConfig cfg;
  SystemChoice system;
  bool evaluate_open_loop{false};
  int rollout{1000};
  std::optional<std::uint64_t> test_seed;
  bool timing{false};
};

int run_train(Train o, std::uint64_t seed) {
  o.cfg.seed = seed;
  const auto data = io::load_dataset(o.data);
  std::optional<Trajectory> test;
  if (o.evaluate_open_loop) {
    const auto sys = o.system.load(seed);
    const auto plant = sys.plant();
    if (plant.n != data.n() || plant.m != data.m())
      throw Error(ErrorCode::DimensionMismatch, "system has n=" + std::to_string(plant.n) +
                                                    ", m=" + std::to_string(plant.m) +
                                                    " but the dataset has n=" + std::to_string(data.n()) +
                                                    ", m=" + std::to_string(data.m()));
    test = make_trajectory(plant, o.rollout, o.test_seed.value_or(seed + 1000));
  }

  if (!o.sweep.empty()) {
    const auto nrs = parse_sweep(o.sweep);
    std::vector<SweepRow> rows;
    if (test) {
      rows = nr_sweep(data, *test, o.cfg, nrs);
    } else {
      for (int nr : nrs) {
        TrainConfig cfg = o.cfg;
        cfg.nr_alpha = cfg.nr_beta = nr;
        SweepRow row;
        row.nr = nr;
        row.report = train(cfg, data).report;
        rows.push_back(std::move(row));
      }
    }
    print_sweep(rows, test.has_value());
    if (!o.report.empty())
      io::write_json(o.report, {{"format", "hybridid-sweep/1"}, {"rows", sweep_to_json(rows, o.timing)}});
    if (!o.out.empty()) io::write_text(o.out, sweep_csv(rows));
    return 0;
  }

  if (o.out.empty()) throw Error(ErrorCode::InvalidArgument, "train needs --out for the model file");
  const auto res = train(o.cfg, data);
  io::save_model(o.out, res.model);
  json rep = io::fit_report_to_json(res.report, o.timing);
  rep["format"] = "hybridid-fit/1";
  rep["seed"] = seed;
  std::cout << "bfr: " << num(res.report.bfr) << "\n"
            << "rms: " << num(res.report.rms) << "\n"
            << "best_restart: " << res.report.best_restart << "\n"
            << "lambda: " << num(res.report.lambda_reg) << "\n";
  if (test) {
    const auto s = open_loop_score(res.model, test->X, test->U);
    rep["open_loop"] = {{"steps", o.rollout}, {"bfr", s.bfr}, {"rms", s.diverged ? json(nullptr) : json(s.rms)},
                        {"diverged", s.diverged}};
    std::cout << "open_loop_bfr: " << num(s.bfr) << "\n";
  }
  for (const auto& d : res.report.diagnostics) std::cout << "diagnostic: " << d << "\n";
  if (o.timing) std::cout << "train_seconds: " << num(res.report.train_seconds) << "\n";
  io::write_json(o.report.empty() ? sibling(o.out, ".report.json") : o.report, rep);
  return 0;
}

struct Eval {
  std::string model, data, traj_out;
  SystemChoice system;
  int rollout{1000};
  std::optional<std::uint64_t> test_seed;
};

int run_eval(const Eval& o, std::uint64_t seed) {
  const auto model = io::load_model(o.model);
  Mat X, U;
  std::optional<Dataset> data;
  if (!o.data.empty()) {
    data = io::load_dataset(o.data);
    if (data->n() != model.n() || data->m() != model.m())
      throw Error(ErrorCode::DimensionMismatch,
                  "model has n=" + std::to_string(model.n()) + ", m=" + std::to_string(model.m()) +
                      " but the dataset has n=" + std::to_string(data->n()) +
                      ", m=" + std::to_string(data->m()));
    const int steps = std::min(o.rollout, data->size());
    X.resize(model.n(), steps + 1);
    X.col(0) = data->X.col(0);
    X.rightCols(steps) = data->X_next.leftCols(steps);
    U = data->U.leftCols(steps);
  } else {
    const auto plant = o.system.load(seed).plant();
    if (plant.n != model.n() || plant.m != model.m())
      throw Error(ErrorCode::DimensionMismatch,
                  "model has n=" + std::to_string(model.n()) + ", m=" + std::to_string(model.m()) +
                      " but the system has n=" + std::to_string(plant.n) +
                      ", m=" + std::to_string(plant.m));
    const auto t = make_trajectory(plant, o.rollout, o.test_seed.value_or(seed + 1000));
    X = t.X;
    U = t.U;
  }
  const auto s = open_loop_score(model, X, U);
  std::cout << "steps: " << U.cols() << "\n"
            << "bfr: " << num(s.bfr) << "\n"
            << "rms: " << num(s.rms) << "\n";
  if (s.diverged) std::cout << "diverged: yes\n";
  if (data) {
    const auto pred = predict_all(model, *data);
    std::cout << "one_step_bfr: " << num(bfr(pred, data->X_next)) << "\n"
              << "one_step_rms: " << num(rms(pred, data->X_next)) << "\n";
  }
  if (!o.traj_out.empty()) {
    const int n = model.n(), m = model.m();
    std::string csv = "step";
    for (int i = 0; i < n; ++i) csv += ",x" + std::to_string(i + 1);
    for (int i = 0; i < n; ++i) csv += ",xhat" + std::to_string(i + 1);
    for (int i = 0; i < m; ++i) csv += ",u" + std::to_string(i + 1);
    csv += "\n";
    for (int k = 0; k < s.X_hat.cols(); ++k) {
      csv += std::to_string(k);
      for (int i = 0; i < n; ++i) csv += "," + num(X(i, k));
      for (int i = 0; i < n; ++i) csv += "," + num(s.X_hat(i, k));
      for (int i = 0; i < m; ++i) csv += "," + (k < U.cols() ? num(U(i, k)) : std::string());
      csv += "\n";
    }
    io::write_text(o.traj_out, csv);
  }
  return 0;
}

struct ToLc {
  std::string model, out, report, data;
  int samples{200};
  double sigma_box{3.0};
};

// LC model of the physical-unit map plus its condition report.
std::pair<LCModel, ConditionReport> lc_with_conditions(const DiffMaxAffineModel& model,
                                                       const std::string& data_path, int samples,
                                                       double sigma_box, std::uint64_t seed) {
  const auto phys = denormalized(model);
  const auto lc = extract_lc(phys);
  const Box box = data_path.empty() ? normalization_box(model, sigma_box) : io::load_dataset(data_path).domain;
  return {lc, check_conditions(lc, phys, sample_box(box, model.n(), samples, seed))};
}

int run_to_lc(const ToLc& o, std::uint64_t seed) {
  const auto model = io::load_model(o.model);
  const auto [lc, rep] = lc_with_conditions(model, o.data, o.samples, o.sigma_box, seed);
  io::save_lc(o.out, lc);
  std::cout << "n: " << lc.n() << "\nm: " << lc.m() << "\nl: " << lc.l() << "\n"
            << "strict_lower_bounds: " << (lc.strict_lower_bounds ? "yes" : "no") << "\n";
  print_conditions(rep);
  if (!o.report.empty()) io::write_json(o.report, io::condition_report_to_json(rep));
  return rep.all_hold() && lc.strict_lower_bounds ? 0 : kExitCertificate;
}

struct Ocp {
  std::string problem, lc, model, conditions, data, out, problem_out;
  std::string solver{"mpcc"};
  int T{7};
  std::vector<double> x0, u_lo{-1.0}, u_hi{1.0}, u_prev, Q{1.0}, R{0.01}, R_delta{0.0}, Q_T, ref{0.0};
  int samples{200};
  MpccOptions mpcc;
};

int run_ocp(const Ocp& o, std::uint64_t seed) {
  std::optional<MpccProblem> p;
  std::optional<DiffMaxAffineModel> model;
  if (!o.model.empty()) model = io::load_model(o.model);
  if (!o.problem.empty()) {
    p = io::mpcc_problem_from_json(io::read_json(o.problem));
  } else {
    std::optional<LCModel> lc;
    std::optional<ConditionReport> rep;
    if (!o.lc.empty()) lc = io::load_lc(o.lc);
    if (model) {
      auto [mlc, mrep] = lc_with_conditions(*model, o.data, o.samples, 3.0, seed);
      if (!lc) lc = std::move(mlc);
      rep = mrep;
    }
    if (!lc) throw Error(ErrorCode::InvalidArgument, "ocp needs --problem, --lc or --model");
    if (!o.conditions.empty()) rep = io::condition_report_from_json(io::read_json(o.conditions));
    const int n = lc->n(), m = lc->m();
    CostSpec cost;
    cost.Q = diag(o.Q, n, "--Q");
    cost.R = diag(o.R, m, "--R");
    cost.R_delta = diag(o.R_delta, m, "--R-delta");
    if (!o.Q_T.empty()) cost.Q_T = diag(o.Q_T, n, "--Q-T");
    if (static_cast<int>(o.ref.size()) == n * o.T)
      cost.reference = Eigen::Map<const Mat>(o.ref.data(), n, o.T);
    else
      cost.reference = broadcast(o.ref, n, "--ref").replicate(1, o.T);
    if (o.x0.empty()) throw Error(ErrorCode::InvalidArgument, "ocp needs --x0");
    const Vec lo = broadcast(o.u_lo, m, "--u-lo"), hi = broadcast(o.u_hi, m, "--u-hi");
    const Vec prev = o.u_prev.empty() ? Vec(0.5 * (lo + hi)) : broadcast(o.u_prev, m, "--u-prev");
    p = build_mpcc(*lc, cost, broadcast(o.x0, n, "--x0"), o.T, lo, hi, prev);
    p->conditions = rep;
  }
  if (model) p->model = *model;
  if (!o.problem_out.empty()) io::write_json(o.problem_out, io::mpcc_problem_to_json(*p));

  MpccSolution sol;
  if (o.solver == "mpcc")
    sol = solve_mpcc(*p, o.mpcc);
  else if (o.solver == "direct")
    sol = baseline_solver(*p, {});
  else
    sol = solve_single_shooting(*p, {});
  if (!o.out.empty()) io::write_json(o.out, io::mpcc_solution_to_json(sol));

  std::cout << "solver: " << o.solver << "\n"
            << "status: " << to_string(sol.status) << "\n"
            << "objective: " << num(sol.objective) << "\n"
            << "kkt_residual: " << num(sol.kkt_residual) << "\n"
            << "comp_violation: " << num(sol.comp_violation) << "\n";
  for (int t = 0; t < p->T; ++t) {
    std::cout << "u[" << t << "]:";
    for (int j = 0; j < p->m(); ++j) std::cout << " " << num(sol.u_traj(t, j));
    std::cout << "\n";
  }
  if (o.solver != "mpcc") {
    std::cout << "certificate: not applicable\n";
    return sol.status == MpccStatus::Failed ? 1 : 0;
  }
  if (!sol.diagnostic.empty()) std::cout << "diagnostic: " << sol.diagnostic << "\n";
  if (sol.status == MpccStatus::Failed) {
    std::cout << "certificate: fail (solver failed)\n";
    return kExitCertificate;
  }
  const auto cert = certify_stationarity(*p, sol);
  std::cout << "certificate_residual: " << num(cert.residual) << "\n"
            << "certificate: " << (cert.pass ? "pass" : "fail (" + cert.reason + ")") << "\n";
  return cert.pass && sol.status == MpccStatus::Stationary ? 0 : kExitCertificate;
}

struct Mpc {
  std::string model, out, summary;
  SystemChoice system;
  std::string mode{"shooting"};
  int T{7}, steps{200};
  std::vector<double> x0, u_lo{0.95}, u_hi{1.2}, Q{0.0, 1.0}, R{0.01}, R_delta{0.001}, Q_T;
  double ref_center{1.8}, ref_amplitude{0.3}, ref_f0{0.005}, ref_f1{0.03};
  bool timing{false};
  MpccOptions mpcc;
};

int run_mpc(const Mpc& o, std::uint64_t seed) {
  const auto model = io::load_model(o.model);
  const auto sys = o.system.load(seed);
  const auto plant = sys.plant();
  const int n = plant.n, m = plant.m;
  MpcConfig cfg;
  cfg.T = o.T;
  cfg.steps = o.steps;
  cfg.u_lo = broadcast(o.u_lo, m, "--u-lo");
  cfg.u_hi = broadcast(o.u_hi, m, "--u-hi");
  cfg.Q = diag(o.Q, n, "--Q");
  cfg.R = diag(o.R, m, "--R");
  cfg.R_delta = diag(o.R_delta, m, "--R-delta");
  if (!o.Q_T.empty()) cfg.Q_T = diag(o.Q_T, n, "--Q-T");
  const Vec r = sine_sweep(o.steps + o.T, o.ref_center, o.ref_amplitude, o.ref_f0, o.ref_f1);
  cfg.reference = r.transpose().replicate(n, 1);
  cfg.mode = parse_mpc_mode(o.mode);
  cfg.mpcc = o.mpcc;
  Vec x0;
  if (!o.x0.empty())
    x0 = broadcast(o.x0, n, "--x0");
  else if (sys.kind == "two-tank")
    x0 = sys.two_tank.steady_state(0.5 * (cfg.u_lo(0) + cfg.u_hi(0)));
  else
    x0 = Vec::Zero(n);

  const auto log = mpc_run(model, plant, x0, cfg);
  io::write_text(o.out, mpc_log_csv(log, o.timing));
  std::cout << "mode: " << to_string(cfg.mode) << "\n"
            << "steps: " << o.steps << "\n"
            << "closed_loop_cost: " << num(log.closed_loop_cost) << "\n"
            << "median_solve_seconds: " << num(log.median_solve_seconds()) << "\n"
            << "events: " << log.events.size() << "\n";
  for (const auto& e : log.events) std::cout << "event: " << e << "\n";
  if (!o.summary.empty()) {
    json s{{"mode", to_string(cfg.mode)},
           {"steps", o.steps},
           {"T", o.T},
           {"closed_loop_cost", log.closed_loop_cost},
           {"events", log.events}};
    if (o.timing) s["median_solve_seconds"] = log.median_solve_seconds();
    io::write_json(o.summary, s);
  }
  return log.events.empty() ? 0 : kExitCertificate;
}

struct Sweep {
  SystemChoice system;
  int n{5000};
  double noise{0.01};
  std::string nr{"2,3,5,7,11,17"};
  TrainConfig cfg;
  int rollout{1000};
  std::string out, report;
  bool timing{false};
};

int run_sweep(Sweep o, std::uint64_t seed) {
  o.cfg.seed = seed;
  const auto plant = o.system.load(seed).plant();
  const auto data = make_dataset(plant, o.n, o.noise, seed);
  const auto test = make_trajectory(plant, o.rollout, seed + 1000);
  const auto rows = nr_sweep(data, test, o.cfg, parse_sweep("nr=" + o.nr));
  print_sweep(rows, true);
  if (!o.out.empty()) io::write_text(o.out, sweep_csv(rows));
  if (!o.report.empty())
    io::write_json(o.report, {{"format", "hybridid-sweep/1"}, {"rows", sweep_to_json(rows, o.timing)}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid system identification with difference-of-max-affine models, LC extraction and MPCC control"};
  app.require_subcommand(1);
  app.fallthrough();
  app.config_formatter(std::make_shared<hybridid::cli::JsonConfig>());
  app.set_config("--config", "", "JSON config; top-level keys are global, objects are per command. Flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);
  std::uint64_t seed = 1;
  app.add_option("--seed", seed, "Global seed")->envname("HYBRIDID_SEED")->capture_default_str();

  GenData gen;
  auto* c_gen = app.add_subcommand("gen-data", "Simulate a benchmark system and write a dataset CSV");
  gen.system.add(c_gen, true);
  c_gen->add_option("--n", gen.n, "Number of triplets")->check(CLI::PositiveNumber)->capture_default_str();
  c_gen->add_option("--noise", gen.noise, "State noise standard deviation")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  c_gen->add_option("--out", gen.out, "Dataset CSV")->required();
  c_gen->add_option("--system-out", gen.system_out, "System file (default: <out>.sys.json)");

  Train tr;
  auto* c_train = app.add_subcommand("train", "Fit a model to a dataset");
  c_train->add_option("--data", tr.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  c_train->add_option("--out", tr.out, "Model file, or the sweep CSV with --sweep");
  c_train->add_option("--report", tr.report, "Report JSON (default: <out>.report.json)");
  add_train_options(c_train, tr.cfg);
  c_train->add_option("--sweep", tr.sweep, "nr=v1,v2,...: train once per value with nr_alpha = nr_beta = v");
  c_train->add_flag("--open-loop", tr.evaluate_open_loop, "Score open-loop rollouts on a fresh trajectory of the system");
  tr.system.add(c_train, true);
  c_train->add_option("--rollout", tr.rollout, "Rollout length")->check(CLI::PositiveNumber)->capture_default_str();
  c_train->add_option("--test-seed", tr.test_seed, "Seed of the test trajectory (default: seed + 1000)");
  c_train->add_flag("--timing", tr.timing, "Include wall-clock fields in the report");

  Eval ev;
  auto* c_eval = app.add_subcommand("eval", "Open-loop BFR/RMS of a model");
  c_eval->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  c_eval->add_option("--data", ev.data, "Held-out dataset CSV (consecutive triplets)")->check(CLI::ExistingFile);
  ev.system.add(c_eval, true);
  c_eval->add_option("--rollout", ev.rollout, "Rollout length")->check(CLI::PositiveNumber)->capture_default_str();
  c_eval->add_option("--test-seed", ev.test_seed, "Seed of the test trajectory (default: seed + 1000)");
  c_eval->add_option("--traj-out", ev.traj_out, "Trajectory CSV for plotting");

  ToLc tl;
  auto* c_lc = app.add_subcommand("to-lc", "Extract the LC model and check its conditions");
  c_lc->add_option("--model", tl.model)->required()->check(CLI::ExistingFile);
  c_lc->add_option("--out", tl.out, "LC file")->required();
  c_lc->add_option("--report", tl.report, "Condition report JSON");
  c_lc->add_option("--data", tl.data, "Dataset whose domain box is sampled")->check(CLI::ExistingFile);
  c_lc->add_option("--samples", tl.samples)->check(CLI::PositiveNumber)->capture_default_str();
  c_lc->add_option("--sigma-box", tl.sigma_box, "Without --data: box of mean ± k·std")->capture_default_str();

  Ocp oc;
  auto* c_ocp = app.add_subcommand("ocp", "Solve one finite-horizon MPCC and certify it");
  c_ocp->add_option("--problem", oc.problem, "Problem file (hybridid-ocp/1)")->check(CLI::ExistingFile);
  c_ocp->add_option("--lc", oc.lc, "LC file")->check(CLI::ExistingFile);
  c_ocp->add_option("--model", oc.model, "Model file; supplies the LC model and its conditions")->check(CLI::ExistingFile);
  c_ocp->add_option("--conditions", oc.conditions, "Condition report JSON for --lc")->check(CLI::ExistingFile);
  c_ocp->add_option("--data", oc.data, "Dataset whose domain box is sampled for the conditions")->check(CLI::ExistingFile);
  c_ocp->add_option("--solver", oc.solver)->check(CLI::IsMember({"mpcc", "direct", "shooting"}))->capture_default_str();
  c_ocp->add_option("--T", oc.T, "Horizon")->check(CLI::PositiveNumber)->capture_default_str();
  c_ocp->add_option("--x0", oc.x0)->delimiter(',');
  c_ocp->add_option("--u-lo", oc.u_lo)->delimiter(',');
  c_ocp->add_option("--u-hi", oc.u_hi)->delimiter(',');
  c_ocp->add_option("--u-prev", oc.u_prev, "Input before the horizon (default: box midpoint)")->delimiter(',');
  c_ocp->add_option("--Q", oc.Q, "State weight diagonal (1 or n values)")->delimiter(',');
  c_ocp->add_option("--R", oc.R)->delimiter(',');
  c_ocp->add_option("--R-delta", oc.R_delta)->delimiter(',');
  c_ocp->add_option("--Q-T", oc.Q_T, "Extra terminal weight diagonal")->delimiter(',');
  c_ocp->add_option("--ref", oc.ref, "n values, or n·T values one step at a time")->delimiter(',');
  c_ocp->add_option("--samples", oc.samples, "Condition-check samples")->capture_default_str();
  add_mpcc_options(c_ocp, oc.mpcc);
  c_ocp->add_option("--out", oc.out, "Solution file");
  c_ocp->add_option("--problem-out", oc.problem_out, "Write the assembled problem");

  Mpc mp;
  auto* c_mpc = app.add_subcommand("mpc", "Closed-loop sine-sweep tracking");
  c_mpc->add_option("--model", mp.model)->required()->check(CLI::ExistingFile);
  mp.system.name = "two-tank";
  mp.system.add(c_mpc, true);
  c_mpc->add_option("--mode", mp.mode)->check(CLI::IsMember({"mpcc", "shooting", "direct"}))->capture_default_str();
  c_mpc->add_option("--T", mp.T)->check(CLI::PositiveNumber)->capture_default_str();
  c_mpc->add_option("--steps", mp.steps)->check(CLI::PositiveNumber)->capture_default_str();
  c_mpc->add_option("--x0", mp.x0)->delimiter(',');
  c_mpc->add_option("--u-lo", mp.u_lo)->delimiter(',');
  c_mpc->add_option("--u-hi", mp.u_hi)->delimiter(',');
  c_mpc->add_option("--Q", mp.Q)->delimiter(',');
  c_mpc->add_option("--R", mp.R)->delimiter(',');
  c_mpc->add_option("--R-delta", mp.R_delta)->delimiter(',');
  c_mpc->add_option("--Q-T", mp.Q_T)->delimiter(',');
  c_mpc->add_option("--ref-center", mp.ref_center)->capture_default_str();
  c_mpc->add_option("--ref-amplitude", mp.ref_amplitude)->capture_default_str();
  c_mpc->add_option("--ref-f0", mp.ref_f0, "Sweep start frequency, cycles per step")->capture_default_str();
  c_mpc->add_option("--ref-f1", mp.ref_f1, "Sweep end frequency, cycles per step")->capture_default_str();
  add_mpcc_options(c_mpc, mp.mpcc);
  c_mpc->add_option("--out", mp.out, "Closed-loop log CSV")->required();
  c_mpc->add_option("--summary", mp.summary, "Summary JSON");
  c_mpc->add_flag("--timing", mp.timing, "Log wall-clock solve times");

  Sweep sw;
  auto* c_sweep = app.add_subcommand("sweep", "Generate data, train for several nr and score open-loop rollouts");
  sw.system.add(c_sweep, true);
  c_sweep->add_option("--n", sw.n)->check(CLI::PositiveNumber)->capture_default_str();
  c_sweep->add_option("--noise", sw.noise)->check(CLI::NonNegativeNumber)->capture_default_str();
  c_sweep->add_option("--nr", sw.nr, "Comma-separated nr values")->capture_default_str();
  add_train_options(c_sweep, sw.cfg);
  c_sweep->add_option("--rollout", sw.rollout)->check(CLI::PositiveNumber)->capture_default_str();
  c_sweep->add_option("--out", sw.out, "CSV: nr,median_bfr,best_bfr,one_step_bfr,one_step_rms");
  c_sweep->add_option("--report", sw.report, "Report JSON");
  c_sweep->add_flag("--timing", sw.timing, "Include wall-clock fields in the report");

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_gen->parsed()) return run_gen_data(gen, seed);
    if (c_train->parsed()) return run_train(tr, seed);
    if (c_eval->parsed()) return run_eval(ev, seed);
    if (c_lc->parsed()) return run_to_lc(tl, seed);
    if (c_ocp->parsed()) return run_ocp(oc, seed);
    if (c_mpc->parsed()) return run_mpc(mp, seed);
    if (c_sweep->parsed()) return run_sweep(sw, seed);
  } catch (const Error& e) {
    std::cerr << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
