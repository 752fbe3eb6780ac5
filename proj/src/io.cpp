#include "hybridid/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <sstream>

namespace hybridid::io {

namespace {

const json& field(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw Error(ErrorCode::Parse, std::string("missing field '") + key + "'");
  return j.at(key);
}

template <typename T>
T get(const json& j, const char* key) {
  try {
    return field(j, key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Parse, std::string("field '") + key + "': " + e.what());
  }
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_or_nan(const json& j, const char* key) {
  const auto& v = field(j, key);
  if (v.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (!v.is_number()) throw Error(ErrorCode::Parse, std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

json piece_to_json(const AffinePiece& p) {
  return {{"A", matrix_to_json(p.A)}, {"B", matrix_to_json(p.B)}, {"c", vector_to_json(p.c)}};
}

AffinePiece piece_from_json(const json& j) {
  return {matrix_from_json(field(j, "A")), matrix_from_json(field(j, "B")),
          vector_from_json(field(j, "c"))};
}

std::vector<AffinePiece> pieces_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::Parse, "piece list must be an array");
  std::vector<AffinePiece> out;
  for (const auto& p : j) out.push_back(piece_from_json(p));
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void expect_format(const json& j, const char* expected) {
  const auto tag = get<std::string>(j, "format");
  if (tag != expected)
    throw Error(ErrorCode::Parse, "expected format '" + std::string(expected) + "', got '" + tag + "'");
}

json matrix_to_json(const Mat& M) {
  json data = json::array();
  for (int i = 0; i < M.rows(); ++i)
    for (int k = 0; k < M.cols(); ++k) data.push_back(M(i, k));
  return {{"rows", M.rows()}, {"cols", M.cols()}, {"data", std::move(data)}};
}

Mat matrix_from_json(const json& j) {
  const auto r = get<long>(j, "rows"), c = get<long>(j, "cols");
  const auto& data = field(j, "data");
  if (r < 0 || c < 0 || !data.is_array() || static_cast<long>(data.size()) != r * c)
    throw Error(ErrorCode::Parse, "matrix shape does not match its data");
  Mat M(r, c);
  for (long i = 0; i < r; ++i)
    for (long k = 0; k < c; ++k) {
      const auto& v = data[i * c + k];
      if (!v.is_number()) throw Error(ErrorCode::Parse, "matrix entries must be numbers");
      M(i, k) = v.get<double>();
    }
  return M;
}

json vector_to_json(const Vec& v) {
  json out = json::array();
  for (int i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Vec vector_from_json(const json& j) {
  if (!j.is_array()) throw Error(ErrorCode::Parse, "vector must be an array");
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw Error(ErrorCode::Parse, "vector entries must be numbers");
    v(static_cast<int>(i)) = j[i].get<double>();
  }
  return v;
}

json model_to_json(const DiffMaxAffineModel& model) {
  json alpha = json::array(), beta = json::array();
  for (const auto& p : model.alpha_pieces()) alpha.push_back(piece_to_json(p));
  for (const auto& p : model.beta_pieces()) beta.push_back(piece_to_json(p));
  const auto& nz = model.normalization();
  return {{"format", kModelFormat},
          {"n", model.n()},
          {"m", model.m()},
          {"nr_alpha", model.nr_alpha()},
          {"nr_beta", model.nr_beta()},
          {"alpha_pieces", std::move(alpha)},
          {"beta_pieces", std::move(beta)},
          {"psi", piece_to_json(model.psi())},
          {"phi", piece_to_json(model.phi())},
          {"h_alpha", vector_to_json(model.h_alpha())},
          {"h_beta", vector_to_json(model.h_beta())},
          {"normalization",
           {{"x_mean", vector_to_json(nz.x_mean)},
            {"x_std", vector_to_json(nz.x_std)},
            {"u_mean", vector_to_json(nz.u_mean)},
            {"u_std", vector_to_json(nz.u_std)}}},
          {"strict_lower_bounds",
           {{"enforced", model.strict_lower_bounds()}, {"eta", model.eta()}, {"zeta", model.zeta()}}}};
}

DiffMaxAffineModel model_from_json(const json& j) {
  expect_format(j, kModelFormat);
  const int n = get<int>(j, "n"), m = get<int>(j, "m");
  auto alpha = pieces_from_json(field(j, "alpha_pieces"));
  auto beta = pieces_from_json(field(j, "beta_pieces"));
  if (static_cast<int>(alpha.size()) != get<int>(j, "nr_alpha") ||
      static_cast<int>(beta.size()) != get<int>(j, "nr_beta"))
    throw Error(ErrorCode::Parse, "piece counts do not match nr_alpha/nr_beta");
  DiffMaxAffineModel model(n, m, std::move(alpha), std::move(beta), piece_from_json(field(j, "psi")),
                           piece_from_json(field(j, "phi")), vector_from_json(field(j, "h_alpha")),
                           vector_from_json(field(j, "h_beta")));
  const auto& nj = field(j, "normalization");
  Normalization nz{vector_from_json(field(nj, "x_mean")), vector_from_json(field(nj, "x_std")),
                   vector_from_json(field(nj, "u_mean")), vector_from_json(field(nj, "u_std"))};
  model = model.with_normalization(std::move(nz));
  const auto& lb = field(j, "strict_lower_bounds");
  const bool enforced = get<bool>(lb, "enforced");
  const double eta = get<double>(lb, "eta"), zeta = get<double>(lb, "zeta");
  if (enforced) {
    // The flag is only kept when the targets really are shifted copies of the first pieces.
    const auto& a1 = model.alpha_pieces().front();
    const auto& b1 = model.beta_pieces().front();
    const bool ok = model.psi().A == a1.A && model.psi().B == a1.B && model.phi().A == b1.A &&
                    model.phi().B == b1.B && (a1.c - model.psi().c).minCoeff() > 0.0 &&
                    (b1.c - model.phi().c).minCoeff() > 0.0;
    if (!ok) throw Error(ErrorCode::Parse, "strict_lower_bounds flag does not match the stored targets");
  }
  return model.with_lower_bound_tag(enforced, eta, zeta);
}

json lc_to_json(const LCModel& lc) {
  json blocks = json::array();
  for (const auto& b : lc.blocks)
    blocks.push_back({{"begin", b.begin},
                      {"size", b.size},
                      {"component", b.component},
                      {"side", b.alpha_side ? "alpha" : "beta"}});
  return {{"format", kLcFormat},           {"n", lc.n()},
          {"m", lc.m()},                   {"l", lc.l()},
          {"A", matrix_to_json(lc.A)},     {"B_u", matrix_to_json(lc.B_u)},
          {"B_w", matrix_to_json(lc.B_w)}, {"d", vector_to_json(lc.d)},
          {"E_w", matrix_to_json(lc.E_w)}, {"E_x", matrix_to_json(lc.E_x)},
          {"E_u", matrix_to_json(lc.E_u)}, {"e", vector_to_json(lc.e)},
          {"block_structure", std::move(blocks)},
          {"strict_lower_bounds", lc.strict_lower_bounds}};
}

LCModel lc_from_json(const json& j) {
  expect_format(j, kLcFormat);
  LCModel lc;
  lc.A = matrix_from_json(field(j, "A"));
  lc.B_u = matrix_from_json(field(j, "B_u"));
  lc.B_w = matrix_from_json(field(j, "B_w"));
  lc.d = vector_from_json(field(j, "d"));
  lc.E_w = matrix_from_json(field(j, "E_w"));
  lc.E_x = matrix_from_json(field(j, "E_x"));
  lc.E_u = matrix_from_json(field(j, "E_u"));
  lc.e = vector_from_json(field(j, "e"));
  for (const auto& b : field(j, "block_structure")) {
    const auto side = get<std::string>(b, "side");
    if (side != "alpha" && side != "beta") throw Error(ErrorCode::Parse, "block side must be alpha or beta");
    lc.blocks.push_back({get<int>(b, "begin"), get<int>(b, "size"), get<int>(b, "component"), side == "alpha"});
  }
  lc.strict_lower_bounds = get<bool>(j, "strict_lower_bounds");
  if (lc.n() != get<int>(j, "n") || lc.m() != get<int>(j, "m") || lc.l() != get<int>(j, "l"))
    throw Error(ErrorCode::Parse, "LC dimensions do not match n/m/l");
  lc.validate();
  return lc;
}

json condition_report_to_json(const ConditionReport& rep) {
  return {{"cond1_max_successor_gap", rep.cond1_max_successor_gap},
          {"cond2_block_diagonal", rep.cond2_block_diagonal},
          {"cond2_off_block_mass", rep.cond2_off_block_mass},
          {"cond2_elementwise", rep.cond2_elementwise},
          {"e_w_min_eigenvalue", rep.e_w_min_eigenvalue},
          {"cond3_fraction_satisfied", rep.cond3_fraction_satisfied},
          {"strict_lb_margin", number_or_null(rep.strict_lb_margin)},
          {"samples", rep.samples},
          {"all_hold", rep.all_hold()}};
}

ConditionReport condition_report_from_json(const json& j) {
  ConditionReport rep;
  rep.cond1_max_successor_gap = number_or_nan(j, "cond1_max_successor_gap");
  rep.cond2_block_diagonal = get<bool>(j, "cond2_block_diagonal");
  rep.cond2_off_block_mass = number_or_nan(j, "cond2_off_block_mass");
  rep.cond2_elementwise = get<bool>(j, "cond2_elementwise");
  rep.e_w_min_eigenvalue = number_or_nan(j, "e_w_min_eigenvalue");
  rep.cond3_fraction_satisfied = number_or_nan(j, "cond3_fraction_satisfied");
  rep.strict_lb_margin = number_or_nan(j, "strict_lb_margin");
  rep.samples = get<int>(j, "samples");
  return rep;
}

json cost_to_json(const CostSpec& cost) {
  return {{"Q", matrix_to_json(cost.Q)},
          {"R", matrix_to_json(cost.R)},
          {"R_delta", matrix_to_json(cost.R_delta)},
          {"Q_T", matrix_to_json(cost.Q_T)},
          {"reference", matrix_to_json(cost.reference)}};
}

CostSpec cost_from_json(const json& j) {
  CostSpec c;
  c.Q = matrix_from_json(field(j, "Q"));
  c.R = matrix_from_json(field(j, "R"));
  c.R_delta = matrix_from_json(field(j, "R_delta"));
  c.Q_T = matrix_from_json(field(j, "Q_T"));
  c.reference = matrix_from_json(field(j, "reference"));
  return c;
}

json mpcc_problem_to_json(const MpccProblem& p) {
  return {{"format", kOcpFormat},
          {"kind", "problem"},
          {"T", p.T},
          {"x0", vector_to_json(p.x0)},
          {"u_lo", vector_to_json(p.u_lo)},
          {"u_hi", vector_to_json(p.u_hi)},
          {"u_prev", vector_to_json(p.u_prev)},
          {"cost", cost_to_json(p.cost)},
          {"lc", lc_to_json(p.lc)},
          {"conditions", p.conditions ? condition_report_to_json(*p.conditions) : json(nullptr)}};
}

MpccProblem mpcc_problem_from_json(const json& j) {
  expect_format(j, kOcpFormat);
  if (get<std::string>(j, "kind") != "problem") throw Error(ErrorCode::Parse, "expected an OCP problem");
  auto p = build_mpcc(lc_from_json(field(j, "lc")), cost_from_json(field(j, "cost")),
                      vector_from_json(field(j, "x0")), get<int>(j, "T"),
                      vector_from_json(field(j, "u_lo")), vector_from_json(field(j, "u_hi")),
                      vector_from_json(field(j, "u_prev")));
  if (!field(j, "conditions").is_null()) p.conditions = condition_report_from_json(j["conditions"]);
  return p;
}

json mpcc_solution_to_json(const MpccSolution& sol) {
  json stages = json::array();
  for (const auto& st : sol.stages)
    stages.push_back({{"tau", st.tau},
                      {"iterations", st.iterations},
                      {"comp_violation", number_or_null(st.comp_violation)},
                      {"objective", number_or_null(st.objective)},
                      {"converged", st.converged},
                      {"kept_previous", st.kept_previous}});
  return {{"format", kOcpFormat},
          {"kind", "solution"},
          {"status", to_string(sol.status)},
          {"objective", number_or_null(sol.objective)},
          {"kkt_residual", number_or_null(sol.kkt_residual)},
          {"comp_violation", number_or_null(sol.comp_violation)},
          {"x_traj", matrix_to_json(sol.x_traj)},
          {"u_traj", matrix_to_json(sol.u_traj)},
          {"w_traj", matrix_to_json(sol.w_traj)},
          {"nu", matrix_to_json(sol.nu)},
          {"gamma", matrix_to_json(sol.gamma)},
          {"mu", matrix_to_json(sol.mu)},
          {"kappa_lo", matrix_to_json(sol.kappa_lo)},
          {"kappa_hi", matrix_to_json(sol.kappa_hi)},
          {"stages", std::move(stages)},
          {"branch_flips", sol.branch_flips},
          {"evaluations", sol.evaluations},
          {"diagnostic", sol.diagnostic}};
}

MpccSolution mpcc_solution_from_json(const json& j) {
  expect_format(j, kOcpFormat);
  if (get<std::string>(j, "kind") != "solution") throw Error(ErrorCode::Parse, "expected an OCP solution");
  MpccSolution sol;
  const auto status = get<std::string>(j, "status");
  if (status == to_string(MpccStatus::Stationary))
    sol.status = MpccStatus::Stationary;
  else if (status == to_string(MpccStatus::Feasible))
    sol.status = MpccStatus::Feasible;
  else if (status == to_string(MpccStatus::Failed))
    sol.status = MpccStatus::Failed;
  else
    throw Error(ErrorCode::Parse, "unknown status '" + status + "'");
  sol.objective = number_or_nan(j, "objective");
  sol.kkt_residual = number_or_nan(j, "kkt_residual");
  sol.comp_violation = number_or_nan(j, "comp_violation");
  sol.x_traj = matrix_from_json(field(j, "x_traj"));
  sol.u_traj = matrix_from_json(field(j, "u_traj"));
  sol.w_traj = matrix_from_json(field(j, "w_traj"));
  sol.nu = matrix_from_json(field(j, "nu"));
  sol.gamma = matrix_from_json(field(j, "gamma"));
  sol.mu = matrix_from_json(field(j, "mu"));
  sol.kappa_lo = matrix_from_json(field(j, "kappa_lo"));
  sol.kappa_hi = matrix_from_json(field(j, "kappa_hi"));
  for (const auto& st : field(j, "stages"))
    sol.stages.push_back({get<double>(st, "tau"), get<int>(st, "iterations"),
                          number_or_nan(st, "comp_violation"), number_or_nan(st, "objective"),
                          get<bool>(st, "converged"), get<bool>(st, "kept_previous")});
  sol.branch_flips = get<int>(j, "branch_flips");
  sol.evaluations = get<int>(j, "evaluations");
  sol.diagnostic = get<std::string>(j, "diagnostic");
  return sol;
}

json certificate_to_json(const Certificate& cert) {
  return {{"residual", number_or_null(cert.residual)},
          {"stationarity", number_or_null(cert.stationarity)},
          {"feasibility", number_or_null(cert.feasibility)},
          {"complementarity", number_or_null(cert.complementarity)},
          {"multiplier_signs", number_or_null(cert.multiplier_signs)},
          {"pass", cert.pass},
          {"reason", cert.reason}};
}

Plant SystemDescription::plant() const {
  if (kind == "sigma-pwa") return make_plant(sigma_pwa);
  if (kind == "two-tank") return make_plant(two_tank);
  throw Error(ErrorCode::InvalidArgument, "unknown system '" + kind + "'");
}

json system_to_json(const SystemDescription& sys) {
  json j{{"format", kSystemFormat}, {"kind", sys.kind}};
  if (sys.kind == "sigma-pwa") {
    const auto& s = sys.sigma_pwa;
    j["A"] = matrix_to_json(s.A);
    j["B"] = matrix_to_json(s.B);
    j["W_A"] = matrix_to_json(s.W_A);
    j["W_B"] = matrix_to_json(s.W_B);
    j["clip_lo"] = s.clip_lo;
    j["clip_hi"] = s.clip_hi;
    j["seed"] = s.seed;
    j["redraws"] = s.redraws;
    j["stability_guard"] = "A redrawn until spectral radius < 1";
  } else if (sys.kind == "two-tank") {
    const auto& t = sys.two_tank;
    j["a1"] = t.a1;
    j["a2"] = t.a2;
    j["b"] = t.b;
    j["dt"] = t.dt;
    j["substeps"] = t.substeps;
    j["u_max"] = t.u_max;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown system '" + sys.kind + "'");
  }
  return j;
}

SystemDescription system_from_json(const json& j) {
  expect_format(j, kSystemFormat);
  SystemDescription sys;
  sys.kind = get<std::string>(j, "kind");
  if (sys.kind == "sigma-pwa") {
    auto& s = sys.sigma_pwa;
    s.A = matrix_from_json(field(j, "A"));
    s.B = matrix_from_json(field(j, "B"));
    s.W_A = matrix_from_json(field(j, "W_A"));
    s.W_B = matrix_from_json(field(j, "W_B"));
    s.clip_lo = get<double>(j, "clip_lo");
    s.clip_hi = get<double>(j, "clip_hi");
    s.seed = get<std::uint64_t>(j, "seed");
    s.redraws = get<int>(j, "redraws");
    require_dims(s.A.rows() == 4 && s.A.cols() == 4 && s.B.rows() == 4 && s.B.cols() == 2 &&
                     s.W_A.rows() == 4 && s.W_A.cols() == 4 && s.W_B.rows() == 4 && s.W_B.cols() == 4,
                 "sigma-pwa matrices must be 4x4 / 4x2");
  } else if (sys.kind == "two-tank") {
    auto& t = sys.two_tank;
    t.a1 = get<double>(j, "a1");
    t.a2 = get<double>(j, "a2");
    t.b = get<double>(j, "b");
    t.dt = get<double>(j, "dt");
    t.substeps = get<int>(j, "substeps");
    t.u_max = get<double>(j, "u_max");
    t.validate();
  } else {
    throw Error(ErrorCode::Parse, "unknown system kind '" + sys.kind + "'");
  }
  return sys;
}

json fit_report_to_json(const FitReport& rep, bool with_timing) {
  json losses = json::array();
  for (double v : rep.per_restart_losses) losses.push_back(number_or_null(v));
  json j{{"bfr", rep.bfr},
         {"rms", rep.rms},
         {"per_restart_losses", std::move(losses)},
         {"best_restart", rep.best_restart},
         {"lambda_reg", rep.lambda_reg},
         {"nr_alpha", rep.nr_alpha},
         {"nr_beta", rep.nr_beta},
         {"restarts", rep.restarts},
         {"train_size", rep.train_size},
         {"validation_size", rep.validation_size},
         {"diagnostics", rep.diagnostics}};
  if (with_timing) j["train_seconds"] = rep.train_seconds;
  return j;
}

std::string dataset_to_csv(const Dataset& data) {
  std::string out;
  for (int i = 0; i < data.n(); ++i) out += (i ? ",x" : "x") + std::to_string(i + 1);
  for (int i = 0; i < data.m(); ++i) out += ",u" + std::to_string(i + 1);
  for (int i = 0; i < data.n(); ++i) out += ",xn" + std::to_string(i + 1);
  out += '\n';
  for (int s = 0; s < data.size(); ++s) {
    for (int i = 0; i < data.n(); ++i) out += (i ? "," : "") + format_double(data.X(i, s));
    for (int i = 0; i < data.m(); ++i) out += "," + format_double(data.U(i, s));
    for (int i = 0; i < data.n(); ++i) out += "," + format_double(data.X_next(i, s));
    out += '\n';
  }
  return out;
}

Dataset dataset_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::Parse, "empty dataset file");
  std::vector<std::string> names;
  {
    std::istringstream hs(line);
    std::string tok;
    while (std::getline(hs, tok, ',')) names.push_back(tok);
  }
  int n = 0, m = 0, nn = 0;
  for (const auto& name : names) {
    if (name.rfind("xn", 0) == 0)
      ++nn;
    else if (name.rfind("x", 0) == 0)
      ++n;
    else if (name.rfind("u", 0) == 0)
      ++m;
    else
      throw Error(ErrorCode::Parse, "unexpected column '" + name + "'");
  }
  if (n < 1 || nn != n) throw Error(ErrorCode::Parse, "header must be x1..xn,u1..um,xn1..xnn");
  for (int i = 0; i < n; ++i) {
    if (names[i] != "x" + std::to_string(i + 1) ||
        names[n + m + i] != "xn" + std::to_string(i + 1))
      throw Error(ErrorCode::Parse, "header must be x1..xn,u1..um,xn1..xnn");
  }
  for (int i = 0; i < m; ++i)
    if (names[n + i] != "u" + std::to_string(i + 1))
      throw Error(ErrorCode::Parse, "header must be x1..xn,u1..um,xn1..xnn");

  std::vector<double> values;
  int rows = 0;
  const int width = 2 * n + m;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const char* p = line.c_str();
    for (int c = 0; c < width; ++c) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) throw Error(ErrorCode::Parse, "bad number on data row " + std::to_string(rows + 1));
      values.push_back(v);
      p = end;
      if (c + 1 < width) {
        if (*p != ',') throw Error(ErrorCode::Parse, "wrong column count on row " + std::to_string(rows + 1));
        ++p;
      }
    }
    if (*p != '\0') throw Error(ErrorCode::Parse, "wrong column count on row " + std::to_string(rows + 1));
    ++rows;
  }
  if (rows < 1) throw Error(ErrorCode::Parse, "dataset has no rows");
  Mat X(n, rows), U(m, rows), Xn(n, rows);
  for (int s = 0; s < rows; ++s) {
    const double* r = values.data() + static_cast<std::size_t>(s) * width;
    for (int i = 0; i < n; ++i) X(i, s) = r[i];
    for (int i = 0; i < m; ++i) U(i, s) = r[n + i];
    for (int i = 0; i < n; ++i) Xn(i, s) = r[n + m + i];
  }
  return Dataset::from_columns(std::move(X), std::move(U), std::move(Xn));
}

std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::Io, "cannot write '" + path + "'");
  f << text;
  if (!f) throw Error(ErrorCode::Io, "write failed for '" + path + "'");
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::Parse, path + ": " + e.what());
  }
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void save_model(const std::string& path, const DiffMaxAffineModel& model) {
  write_json(path, model_to_json(model));
}
DiffMaxAffineModel load_model(const std::string& path) { return model_from_json(read_json(path)); }
void save_lc(const std::string& path, const LCModel& lc) { write_json(path, lc_to_json(lc)); }
LCModel load_lc(const std::string& path) { return lc_from_json(read_json(path)); }
void save_dataset(const std::string& path, const Dataset& data) {
  write_text(path, dataset_to_csv(data));
}
Dataset load_dataset(const std::string& path) { return dataset_from_csv(read_text(path)); }

}  // namespace hybridid::io
