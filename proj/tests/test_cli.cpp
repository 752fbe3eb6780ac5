// Runs the hybridid executable end to end and cross-checks its output
// against the library API.

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "hybridid/benchmarks.hpp"
#include "hybridid/io.hpp"
#include "hybridid/ocp.hpp"
#include "test_support.hpp"

using namespace hybridid;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code{-1};
  std::string out;
};

RunResult run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + HYBRIDID_CLI + std::string(" ") + args + " 2>&1";
  RunResult r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe) != nullptr) r.out += buf.data();
  const int status = pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// Value printed on the line "key: value".
double value_of(const std::string& out, const std::string& key) {
  std::istringstream in(out);
  std::string line;
  while (std::getline(in, line))
    if (line.rfind(key + ": ", 0) == 0) return std::strtod(line.c_str() + key.size() + 2, nullptr);
  FAIL("key '" << key << "' not printed in:\n" << out);
  return NAN;
}

bool prints(const std::string& out, const std::string& text) { return out.find(text) != std::string::npos; }

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("hybridid_cli_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  [[nodiscard]] std::string operator/(const std::string& f) const { return (path / f).string(); }
};

int count_lines(const std::string& text) {
  return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

// Scalar model x⁺ = 0.8x + 0.3u + 0.1 (targets far below).
DiffMaxAffineModel linear_model() {
  auto p = [](double a, double b, double c) {
    return AffinePiece{Mat::Constant(1, 1, a), Mat::Constant(1, 1, b), Vec::Constant(1, c)};
  };
  return {1, 1, {p(0.8, 0.3, 0.1)}, {p(0, 0, 0)}, p(0, 0, -1e3), p(0, 0, -1e3)};
}

// Consecutive triplets of a plant that is the model itself.
Dataset self_dataset(const DiffMaxAffineModel& model, int N) {
  Plant plant;
  plant.name = "model";
  plant.n = model.n();
  plant.m = model.m();
  plant.step = [&](const Vec& x, const Vec& u) { return predict(model, x, u); };
  const Mat U = uniform_excitation({Vec::Constant(1, -1.0), Vec::Constant(1, 1.0)}, N, 1, 5);
  const Mat X = simulate(plant, Vec::Constant(1, 0.2), U);
  return Dataset::from_columns(X.leftCols(N), U, X.rightCols(N));
}

}  // namespace

TEST_CASE("cli: gen-data writes N rows deterministically and validates --n") {
  TempDir dir("gen");
  const auto r = run("gen-data --system sigma-pwa --n 5000 --noise 0.01 --seed 1 --out " + dir / "a.csv");
  REQUIRE(r.code == 0);
  CHECK(prints(r.out, "N: 5000"));
  CHECK(prints(r.out, "noise_sigma: 0.01"));
  CHECK(prints(r.out, "domain: ["));
  const auto text = io::read_text(dir / "a.csv");
  CHECK(count_lines(text) == 5001);
  CHECK(fs::exists(dir / "a.sys.json"));

  REQUIRE(run("gen-data --system sigma-pwa --n 5000 --noise 0.01 --seed 1 --out " + dir / "b.csv").code == 0);
  CHECK(io::read_text(dir / "b.csv") == text);
  CHECK(io::read_text(dir / "b.sys.json") == io::read_text(dir / "a.sys.json"));

  // Same data as the library generator.
  const auto d = make_dataset(make_plant(SigmaPwaSystem::generate(1)), 5000, 0.01, 1);
  CHECK(io::dataset_to_csv(d) == text);

  CHECK(run("gen-data --n 0 --out " + dir / "c.csv").code != 0);
  CHECK(run("gen-data --system queue --out " + dir / "c.csv").code != 0);
  CHECK(run("gen-data --n 10 --out /nonexistent/dir/x.csv").code == 1);
}

TEST_CASE("cli: seed fallback and JSON config") {
  TempDir dir("cfg");
  REQUIRE(run("gen-data --n 40 --seed 7 --out " + dir / "flag.csv").code == 0);
  REQUIRE(run("gen-data --n 40 --out " + dir / "env.csv", "HYBRIDID_SEED=7").code == 0);
  CHECK(io::read_text(dir / "flag.csv") == io::read_text(dir / "env.csv"));

  io::write_text(dir / "cfg.json", R"({"seed": 7, "gen-data": {"n": 40, "noise": 0.01}})");
  REQUIRE(run("gen-data --config " + dir / "cfg.json" + " --out " + dir / "cfg.csv").code == 0);
  CHECK(io::read_text(dir / "cfg.csv") == io::read_text(dir / "flag.csv"));
  // Flags override file values.
  REQUIRE(run("gen-data --config " + dir / "cfg.json" + " --n 12 --out " + dir / "over.csv").code == 0);
  CHECK(count_lines(io::read_text(dir / "over.csv")) == 13);

  io::write_text(dir / "bad.json", R"({"gen-data": {"samples": 3}})");
  const auto r = run("gen-data --config " + dir / "bad.json" + " --out " + dir / "x.csv");
  CHECK(r.code != 0);
  CHECK(prints(r.out, "samples"));
  io::write_text(dir / "broken.json", "{ n: 3");
  CHECK(run("gen-data --config " + dir / "broken.json" + " --out " + dir / "x.csv").code != 0);
}

TEST_CASE("cli: train report, lambda default and nr sweep") {
  TempDir dir("train");
  REQUIRE(run("gen-data --system two-tank --n 400 --noise 0 --out " + dir / "d.csv").code == 0);
  const std::string common = " --data " + dir / "d.csv" + " --restarts 2 --epochs 20 --threads 1";
  const auto r = run("train" + common + " --out " + dir / "m.json");
  REQUIRE(r.code == 0);
  const auto rep = io::read_json(dir / "m.report.json");
  CHECK(rep["lambda_reg"] == 0.01);
  CHECK(rep["bfr"].is_number());
  CHECK(rep["rms"].is_number());
  CHECK(rep["per_restart_losses"].size() == 2);
  CHECK_FALSE(rep.contains("train_seconds"));
  CHECK(value_of(r.out, "bfr") == rep["bfr"].get<double>());
  CHECK(io::load_model(dir / "m.json").strict_lower_bounds());

  // Same flags, same files.
  REQUIRE(run("train" + common + " --out " + dir / "m2.json").code == 0);
  CHECK(io::read_text(dir / "m2.json") == io::read_text(dir / "m.json"));
  CHECK(io::read_text(dir / "m2.report.json") == io::read_text(dir / "m.report.json"));

  const auto s = run("train" + common + " --sweep nr=2,3,5,7,11,17 --open-loop --system two-tank --rollout 100" +
                     " --out " + dir / "sweep.csv" + " --report " + dir / "sweep.json");
  REQUIRE(s.code == 0);
  const auto csv = io::read_text(dir / "sweep.csv");
  CHECK(count_lines(csv) == 7);
  CHECK(csv.rfind("nr,median_bfr,best_bfr", 0) == 0);
  CHECK(io::read_json(dir / "sweep.json")["rows"].size() == 6);
  CHECK(run("train" + common + " --sweep nr=2,x").code == 1);
  CHECK(run("train --data " + dir / "missing.csv" + " --out " + dir / "x.json").code != 0);
}

TEST_CASE("cli: eval on perfect and mean predictors, cross-checked with the API") {
  TempDir dir("eval");
  const auto model = linear_model();
  const auto d = self_dataset(model, 300);
  io::save_dataset(dir / "d.csv", d);
  io::save_model(dir / "perfect.json", model);
  const auto r = run("eval --model " + dir / "perfect.json" + " --data " + dir / "d.csv" + " --traj-out " +
                     dir / "traj.csv");
  REQUIRE(r.code == 0);
  CHECK(value_of(r.out, "bfr") == 1.0);
  CHECK(value_of(r.out, "rms") <= 1e-12);
  CHECK(count_lines(io::read_text(dir / "traj.csv")) == 302);

  // Constant prediction at the mean of the targets.
  const double mean = d.X_next.mean();
  const AffinePiece c{Mat::Zero(1, 1), Mat::Zero(1, 1), Vec::Constant(1, mean)};
  const AffinePiece z{Mat::Zero(1, 1), Mat::Zero(1, 1), Vec::Zero(1)};
  const AffinePiece low{Mat::Zero(1, 1), Mat::Zero(1, 1), Vec::Constant(1, -1e3)};
  const DiffMaxAffineModel mean_model(1, 1, {c}, {z}, low, low);
  io::save_model(dir / "mean.json", mean_model);
  const auto rm = run("eval --model " + dir / "mean.json" + " --data " + dir / "d.csv");
  REQUIRE(rm.code == 0);
  CHECK(value_of(rm.out, "bfr") <= 1e-12);

  // A trained model: printed metrics equal the API values.
  std::mt19937_64 rng(3);
  auto noisy = hybridid::testing::random_model(rng, 1, 1, 2, 2);
  noisy = enforce_strict_lower_bounds(noisy.with_hessians(Vec::Ones(1), Vec::Ones(1)), 1.0, 1.0);
  io::save_model(dir / "r.json", noisy);
  const auto back = io::load_model(dir / "r.json");
  Mat X(1, d.size() + 1);
  X << d.X.col(0), d.X_next;
  const auto api = open_loop_score(back, X, d.U);
  const auto rr = run("eval --model " + dir / "r.json" + " --data " + dir / "d.csv");
  REQUIRE(rr.code == 0);
  CHECK(std::abs(value_of(rr.out, "bfr") - api.bfr) <= 1e-12);
  CHECK(std::abs(value_of(rr.out, "rms") - api.rms) <= 1e-12);
  CHECK(std::abs(value_of(rr.out, "one_step_bfr") - bfr(predict_all(back, d), d.X_next)) <= 1e-12);

  REQUIRE(run("gen-data --n 20 --out " + dir / "big.csv").code == 0);
  const auto mismatch = run("eval --model " + dir / "perfect.json" + " --data " + dir / "big.csv");
  CHECK(mismatch.code == 1);
  CHECK(prints(mismatch.out, "n=1, m=1"));
  CHECK(prints(mismatch.out, "n=4, m=2"));
}

TEST_CASE("cli: to-lc prints the condition report and gates the exit code") {
  TempDir dir("lc");
  std::mt19937_64 rng(9);
  const auto raw = hybridid::testing::random_model(rng, 2, 1, 2, 2);
  io::save_model(dir / "raw.json", raw);
  io::save_model(dir / "enf.json", enforce_strict_lower_bounds(raw, 1.0, 1.0));

  const auto ok = run("to-lc --model " + dir / "enf.json" + " --out " + dir / "lc.json" + " --report " +
                      dir / "cond.json");
  CHECK(ok.code == 0);
  CHECK(prints(ok.out, "conditions: hold"));
  CHECK(prints(ok.out, "l: 8"));
  CHECK(io::load_lc(dir / "lc.json").strict_lower_bounds);
  CHECK(io::read_json(dir / "cond.json")["all_hold"] == true);

  const auto bad = run("to-lc --model " + dir / "raw.json" + " --out " + dir / "lc2.json");
  CHECK(bad.code == 2);
  CHECK(prints(bad.out, "cond1_max_successor_gap"));
  CHECK(prints(bad.out, "strict_lower_bounds: no"));
}

TEST_CASE("cli: ocp on a purely linear LC model matches the LQ solution") {
  TempDir dir("ocp");
  LCModel lc;
  lc.A = Mat::Constant(1, 1, 0.9);
  lc.B_u = Mat::Constant(1, 1, 0.5);
  lc.B_w = Mat(1, 0);
  lc.d = Vec::Constant(1, 0.1);
  lc.E_w = Mat(0, 0);
  lc.E_x = Mat(0, 1);
  lc.E_u = Mat(0, 1);
  lc.e = Vec(0);
  io::save_lc(dir / "lin.json", lc);

  const auto r = run("ocp --lc " + dir / "lin.json" + " --x0 1 --T 5 --u-lo -2 --u-hi 2 --u-prev 0 --Q 1 --R 0.1" +
                     " --R-delta 0.01 --ref 0.5 --out " + dir / "sol.json" + " --problem-out " + dir / "p.json");
  // Solved and stationary, but an LC model without a source model cannot be certified.
  CHECK(r.code == 2);
  CHECK(prints(r.out, "status: stationary"));
  CHECK(prints(r.out, "certificate: fail (conditions unverified)"));

  CostSpec cost{Mat::Identity(1, 1), 0.1 * Mat::Identity(1, 1), 0.01 * Mat::Identity(1, 1), Mat(),
                Mat::Constant(1, 5, 0.5)};
  const auto p = build_mpcc(lc, cost, Vec::Ones(1), 5, Vec::Constant(1, -2), Vec::Constant(1, 2), Vec::Zero(1));
  const auto api = solve_mpcc(p, {});
  CHECK(std::abs(value_of(r.out, "objective") - api.objective) <= 1e-8);
  const auto sol = io::mpcc_solution_from_json(io::read_json(dir / "sol.json"));
  CHECK((sol.u_traj - api.u_traj).cwiseAbs().maxCoeff() <= 1e-8);

  // Problem files round-trip through the CLI byte for byte.
  REQUIRE(run("ocp --problem " + dir / "p.json" + " --problem-out " + dir / "p2.json").code == 2);
  CHECK(io::read_text(dir / "p2.json") == io::read_text(dir / "p.json"));

  CHECK(run("ocp --lc " + dir / "lin.json" + " --T 5").code == 1);                 // no x0
  CHECK(run("ocp --lc " + dir / "lin.json" + " --x0 1,2 --T 5").code == 1);        // wrong size
}

TEST_CASE("cli: ocp certifies a solve on an enforced model") {
  TempDir dir("ocp2");
  std::mt19937_64 rng(11);
  auto m = hybridid::testing::random_model(rng, 1, 1, 1, 1);
  m = enforce_strict_lower_bounds(m.with_hessians(Vec::Ones(1), Vec::Ones(1)), 0.5, 0.5);
  io::save_model(dir / "m.json", m);
  const auto r = run("ocp --model " + dir / "m.json" + " --x0 0.3 --T 2 --u-lo -1 --u-hi 1 --Q 1 --R 0.1 --ref 0.2");
  CHECK(r.code == 0);
  CHECK(prints(r.out, "certificate: pass"));
  CHECK(value_of(r.out, "kkt_residual") <= 1e-6);
}

TEST_CASE("cli: mpc writes one log row per step") {
  TempDir dir("mpc");
  REQUIRE(run("gen-data --system two-tank --n 600 --noise 0 --out " + dir / "d.csv").code == 0);
  REQUIRE(run("train --data " + dir / "d.csv" + " --restarts 2 --epochs 40 --threads 1 --nr-alpha 3 --nr-beta 3" +
              " --out " + dir / "m.json").code == 0);
  const auto r = run("mpc --model " + dir / "m.json" + " --system-file " + dir / "d.sys.json" +
                     " --steps 30 --out " + dir / "log.csv" + " --summary " + dir / "s.json");
  CHECK(r.code == 0);
  const auto log = io::read_text(dir / "log.csv");
  CHECK(count_lines(log) == 31);
  CHECK(log.rfind("step,time_s,x1,x2,u1,r,objective,kkt_residual\n", 0) == 0);
  const auto s = io::read_json(dir / "s.json");
  CHECK(s["closed_loop_cost"].get<double>() == value_of(r.out, "closed_loop_cost"));
  CHECK_FALSE(s.contains("median_solve_seconds"));

  REQUIRE(run("mpc --model " + dir / "m.json" + " --system-file " + dir / "d.sys.json" + " --steps 30 --out " +
              dir / "log2.csv").code == 0);
  CHECK(io::read_text(dir / "log2.csv") == log);
}
