#pragma once

// File formats. Structured documents are JSON with a "format" version tag;
// matrices are {"rows", "cols", "data"} with data in row-major order.
// Datasets are CSV with header x1..xn,u1..um,xn1..xnn and %.17g values.

#include <string>

#include "json.hpp"

#include "hybridid/benchmarks.hpp"
#include "hybridid/identification.hpp"
#include "hybridid/lc_model.hpp"
#include "hybridid/model.hpp"
#include "hybridid/ocp.hpp"

namespace hybridid::io {

using json = nlohmann::json;

inline constexpr const char* kModelFormat = "hybridid-model/1";
inline constexpr const char* kLcFormat = "hybridid-lc/1";
inline constexpr const char* kSystemFormat = "hybridid-sys/1";
inline constexpr const char* kOcpFormat = "hybridid-ocp/1";

[[nodiscard]] json matrix_to_json(const Mat& M);
[[nodiscard]] Mat matrix_from_json(const json& j);
[[nodiscard]] json vector_to_json(const Vec& v);
[[nodiscard]] Vec vector_from_json(const json& j);

[[nodiscard]] json model_to_json(const DiffMaxAffineModel& model);
[[nodiscard]] DiffMaxAffineModel model_from_json(const json& j);

[[nodiscard]] json lc_to_json(const LCModel& lc);
[[nodiscard]] LCModel lc_from_json(const json& j);

[[nodiscard]] json condition_report_to_json(const ConditionReport& rep);
/// Reads the measured fields back; the stored "all_hold" is recomputed, not trusted.
[[nodiscard]] ConditionReport condition_report_from_json(const json& j);

[[nodiscard]] json cost_to_json(const CostSpec& cost);
[[nodiscard]] CostSpec cost_from_json(const json& j);

/// OCP documents share kOcpFormat and carry "kind": "problem" or "solution".
/// A problem embeds its LC model and, when present, the condition report;
/// the source model is not stored.
[[nodiscard]] json mpcc_problem_to_json(const MpccProblem& p);
[[nodiscard]] MpccProblem mpcc_problem_from_json(const json& j);
[[nodiscard]] json mpcc_solution_to_json(const MpccSolution& sol);
[[nodiscard]] MpccSolution mpcc_solution_from_json(const json& j);
[[nodiscard]] json certificate_to_json(const Certificate& cert);

/// Either benchmark system; `kind` is "sigma-pwa" or "two-tank".
struct SystemDescription {
  std::string kind;
  SigmaPwaSystem sigma_pwa;
  TwoTankSystem two_tank;

  [[nodiscard]] Plant plant() const;
};

[[nodiscard]] json system_to_json(const SystemDescription& sys);
[[nodiscard]] SystemDescription system_from_json(const json& j);

/// `with_timing = false` drops wall-clock fields so reports can be compared byte for byte.
[[nodiscard]] json fit_report_to_json(const FitReport& rep, bool with_timing = true);

[[nodiscard]] std::string dataset_to_csv(const Dataset& data);
[[nodiscard]] Dataset dataset_from_csv(const std::string& text);

[[nodiscard]] std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);
[[nodiscard]] json read_json(const std::string& path);
void write_json(const std::string& path, const json& j);

void save_model(const std::string& path, const DiffMaxAffineModel& model);
[[nodiscard]] DiffMaxAffineModel load_model(const std::string& path);
void save_lc(const std::string& path, const LCModel& lc);
[[nodiscard]] LCModel load_lc(const std::string& path);
void save_dataset(const std::string& path, const Dataset& data);
[[nodiscard]] Dataset load_dataset(const std::string& path);

/// Shortest text that reads back to the same double ("%.17g").
[[nodiscard]] std::string format_double(double v);

/// Throws Error(Parse) unless j["format"] == expected.
void expect_format(const json& j, const char* expected);

}  // namespace hybridid::io
