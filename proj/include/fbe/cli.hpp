#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "checks.hpp"
#include "error.hpp"
#include "fgcb.hpp"
#include "models.hpp"
#include "protocol.hpp"
#include "thermal.hpp"

namespace fbe::cli {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kSchemaVersion = 1;

enum ExitCode { kExitOk = 0, kExitConfig = 2, kExitNumerical = 3, kExitInvariant = 4 };

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// configuration

struct HeatScaling {
  Eigen::Vector3d direction = Eigen::Vector3d(1, 0, 0);  // (A2, B1, B2), normalized in the weighted norm
  double exponent = 0.7;
};

struct ExperimentConfig {
  ModelSpec model;
  InverseTemperature theta0;
  std::optional<HeatVector> heat;
  std::optional<HeatScaling> scaling;
  std::optional<double> beta0, gamma0;
  std::vector<double> lambdas;
  std::vector<double> angles;  // spin_half_bath coefficient sweep
  DensityMode densities = DensityMode::Analytic;
  double lambda_ref = 0;
  bool richardson = false;
  SolverOptions solver;
  double log_mass_cut = 40.0;
  double pythagorean_tol = 1e-9;
  double fisher_tol = 1e-4;
  double entropy_tol = 1e-12;
  double second_law_tol = 1e-9;
  std::string out;
  std::string format = "csv";
  json raw;
  std::uint64_t hash = 0;
};

// FNV-1a 64 over the canonical (sorted-key, compact) serialization.
inline std::uint64_t config_hash(const json& j) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : j.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

[[noreturn]] inline void config_fail(const std::string& field, const std::string& msg) {
  throw Error(ErrorCode::ConfigError, "field '" + field + "': " + msg);
}

inline double get_number(const json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) config_fail(path + key, "missing");
  if (!j.at(key).is_number()) config_fail(path + key, "expected a number");
  return j.at(key).get<double>();
}

inline double opt_number(const json& j, const std::string& key, double def, const std::string& path) {
  return j.contains(key) ? get_number(j, key, path) : def;
}

inline std::vector<double> number_list(const json& j, const std::string& key, const std::string& path) {
  if (!j.at(key).is_array()) config_fail(path + key, "expected an array of numbers");
  std::vector<double> v;
  for (size_t i = 0; i < j.at(key).size(); ++i) {
    if (!j.at(key)[i].is_number()) config_fail(path + key + "[" + std::to_string(i) + "]", "expected a number");
    v.push_back(j.at(key)[i].get<double>());
  }
  return v;
}

inline ModelSpec parse_model(const json& m) {
  if (!m.is_object()) config_fail("model", "expected an object");
  if (!m.contains("kind") || !m.at("kind").is_string()) config_fail("model.kind", "missing or not a string");
  ModelSpec s;
  try {
    s.kind = parse_model_kind(m.at("kind").get<std::string>());
  } catch (const Error& e) {
    config_fail("model.kind", e.what());
  }
  const std::string p = "model.";
  s.omega_c = opt_number(m, "omega_c", s.omega_c, p);
  s.omega_h = opt_number(m, "omega_h", s.omega_h, p);
  s.J_c = opt_number(m, "J_c", s.J_c, p);
  s.J_h = opt_number(m, "J_h", s.J_h, p);
  s.omega = opt_number(m, "omega", s.omega, p);
  s.angle = opt_number(m, "angle", s.angle, p);
  s.l_c = opt_number(m, "l_c", s.l_c, p);
  s.l_h = opt_number(m, "l_h", s.l_h, p);
  s.mass = opt_number(m, "mass", s.mass, p);
  s.cutoff = opt_number(m, "cutoff", s.cutoff, p);
  for (auto it = m.begin(); it != m.end(); ++it) {
    static const char* known[] = {"kind", "omega_c", "omega_h", "J_c", "J_h", "omega", "angle",
                                  "l_c", "l_h", "mass", "cutoff"};
    if (std::find_if(std::begin(known), std::end(known), [&](const char* k) { return it.key() == k; }) ==
        std::end(known))
      config_fail(p + it.key(), "unknown model parameter");
  }
  try {
    validate_spec(s);
  } catch (const Error& e) {
    config_fail("model", e.what());
  }
  return s;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using detail::config_fail;
  if (!j.is_object()) config_fail("<root>", "expected an object");
  if (!j.contains("schema_version") || !j.at("schema_version").is_number_integer())
    config_fail("schema_version", "missing or not an integer");
  if (j.at("schema_version").get<int>() != kSchemaVersion)
    config_fail("schema_version", "unsupported version " + j.at("schema_version").dump());
  ExperimentConfig c;
  c.raw = j;
  c.hash = config_hash(j);
  if (!j.contains("model")) config_fail("model", "missing");
  c.model = detail::parse_model(j.at("model"));
  const int K = int(model_labels(c.model.kind).size());
  if (!j.contains("theta0")) config_fail("theta0", "missing");
  auto t = detail::number_list(j, "theta0", "");
  if (int(t.size()) != K) config_fail("theta0", "expected " + std::to_string(K) + " entries for this model");
  c.theta0 = Eigen::Map<Eigen::VectorXd>(t.data(), K);
  if (c.model.kind == ModelKind::FermiGasWell && !(c.model.cutoff > 0)) c.model.cutoff = fermi_default_cutoff(c.theta0);

  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    if (w.contains("beta0")) c.beta0 = detail::get_number(w, "beta0", "weights.");
    if (w.contains("gamma0")) c.gamma0 = detail::get_number(w, "gamma0", "weights.");
  }
  if (j.contains("heat") && j.contains("heat_scaling")) config_fail("heat", "give either heat or heat_scaling");
  if (j.contains("heat")) {
    const auto& h = j.at("heat");
    HeatVector q;
    q.dQ_A2 = detail::opt_number(h, "dQ_A2", 0, "heat.");
    q.dQ_B1 = detail::opt_number(h, "dQ_B1", 0, "heat.");
    q.dQ_B2 = detail::opt_number(h, "dQ_B2", 0, "heat.");
    c.heat = q;
  }
  if (j.contains("heat_scaling")) {
    const auto& h = j.at("heat_scaling");
    HeatScaling s;
    auto d = detail::number_list(h, "direction", "heat_scaling.");
    if (d.size() != 3) config_fail("heat_scaling.direction", "expected [dQ_A2, dQ_B1, dQ_B2]");
    s.direction = Eigen::Vector3d(d[0], d[1], d[2]);
    if (s.direction.norm() == 0) config_fail("heat_scaling.direction", "must be nonzero");
    s.exponent = detail::get_number(h, "exponent", "heat_scaling.");
    if (!(s.exponent > 0 && s.exponent < 1)) config_fail("heat_scaling.exponent", "must lie in (0, 1)");
    c.scaling = s;
  }
  if (j.contains("lambdas")) {
    c.lambdas = detail::number_list(j, "lambdas", "");
    for (size_t i = 0; i < c.lambdas.size(); ++i) {
      if (!(c.lambdas[i] > 0)) config_fail("lambdas[" + std::to_string(i) + "]", "must be positive");
      if (i > 0 && !(c.lambdas[i] > c.lambdas[i - 1]))
        config_fail("lambdas[" + std::to_string(i) + "]", "list must be strictly increasing");
    }
  }
  if (j.contains("angles")) c.angles = detail::number_list(j, "angles", "");
  if (j.contains("densities")) {
    const auto& d = j.at("densities");
    if (d.contains("mode")) {
      const auto m = d.at("mode").get<std::string>();
      if (m == "analytic")
        c.densities = DensityMode::Analytic;
      else if (m == "numeric")
        c.densities = DensityMode::Numeric;
      else
        config_fail("densities.mode", "expected analytic or numeric");
    }
    c.lambda_ref = detail::opt_number(d, "lambda_ref", 0, "densities.");
    if (d.contains("richardson")) c.richardson = d.at("richardson").get<bool>();
    if (c.densities == DensityMode::Numeric && !(c.lambda_ref > 0))
      config_fail("densities.lambda_ref", "numeric densities need a positive lambda_ref");
  }
  if (j.contains("tolerances")) {
    const auto& t2 = j.at("tolerances");
    const std::string p = "tolerances.";
    c.solver.tol = detail::opt_number(t2, "solver", c.solver.tol, p);
    c.log_mass_cut = detail::opt_number(t2, "log_mass_cut", c.log_mass_cut, p);
    c.pythagorean_tol = detail::opt_number(t2, "pythagorean", c.pythagorean_tol, p);
    c.fisher_tol = detail::opt_number(t2, "fisher_hessian", c.fisher_tol, p);
    c.entropy_tol = detail::opt_number(t2, "entropy", c.entropy_tol, p);
    c.second_law_tol = detail::opt_number(t2, "second_law", c.second_law_tol, p);
  }
  if (j.contains("output")) {
    const auto& o = j.at("output");
    if (o.contains("path")) c.out = o.at("path").get<std::string>();
    if (o.contains("format")) c.format = o.at("format").get<std::string>();
    if (c.format != "csv" && c.format != "json") config_fail("output.format", "expected csv or json");
  }
  return c;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // byte offset -> line/column
    size_t line = 1, col = 1;
    for (size_t i = 0; i + 1 < e.byte && i < text.size(); ++i) {
      if (text[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw Error(ErrorCode::ConfigError,
                path + ":" + std::to_string(line) + ":" + std::to_string(col) + ": " + e.what());
  }
  try {
    return parse_config(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ConfigError, path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// tables

using Cell = std::variant<std::monostate, double, std::int64_t, bool, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string cell_text(const Cell& c) {
  struct V {
    std::string operator()(std::monostate) const { return ""; }
    std::string operator()(double v) const { return format_double(v); }
    std::string operator()(std::int64_t v) const { return std::to_string(v); }
    std::string operator()(bool v) const { return v ? "true" : "false"; }
    std::string operator()(const std::string& v) const { return v; }
  };
  return std::visit(V{}, c);
}

// RFC 4180: quote fields containing comma, quote, CR or LF; double embedded quotes.
inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char ch : s) {
    if (ch == '"') o += '"';
    o += ch;
  }
  return o + "\"";
}

inline std::string to_csv(const Table& t) {
  std::string o;
  for (size_t i = 0; i < t.columns.size(); ++i) o += (i ? "," : "") + csv_field(t.columns[i]);
  o += "\r\n";
  for (const auto& r : t.rows) {
    for (size_t i = 0; i < r.size(); ++i) o += (i ? "," : "") + csv_field(cell_text(r[i]));
    o += "\r\n";
  }
  return o;
}

inline ordered_json cell_json(const Cell& c) {
  struct V {
    ordered_json operator()(std::monostate) const { return nullptr; }
    ordered_json operator()(double v) const {
      // fixed 17-digit text keeps output byte-stable; non-finite values become strings
      if (!std::isfinite(v)) return format_double(v);
      return ordered_json::parse(format_double(v));
    }
    ordered_json operator()(std::int64_t v) const { return v; }
    ordered_json operator()(bool v) const { return v; }
    ordered_json operator()(const std::string& v) const { return v; }
  };
  return std::visit(V{}, c);
}

inline ordered_json to_json(const Table& t) {
  ordered_json a = ordered_json::array();
  for (const auto& r : t.rows) {
    ordered_json o = ordered_json::object();
    for (size_t i = 0; i < r.size(); ++i) o[t.columns[i]] = cell_json(r[i]);
    a.push_back(o);
  }
  return a;
}

inline std::string join(const Eigen::VectorXd& v) {
  std::string s;
  for (Eigen::Index i = 0; i < v.size(); ++i) s += (i ? ";" : "") + format_double(v(i));
  return s;
}

// Long-format rows (series, x, y) for external plotting.
struct PlotData {
  std::vector<std::tuple<std::string, double, double>> points;
  void add(std::string series, double x, double y) { points.emplace_back(std::move(series), x, y); }
  std::string to_csv() const {
    std::string o = "series,x,y\r\n";
    for (const auto& [s, x, y] : points) o += csv_field(s) + "," + format_double(x) + "," + format_double(y) + "\r\n";
    return o;
  }
};

struct CommandResult {
  Table table;
  ordered_json report;  // sweep/verify summary (null for plain tables)
  PlotData plot;
  int exit_code = kExitOk;
};

// ---------------------------------------------------------------------------
// worker pool

// Runs f(i) for i in [0, n) on `jobs` threads; results land at their index so
// output order never depends on completion order.
template <class R>
std::vector<R> parallel_map(std::size_t n, int jobs, const std::function<R(std::size_t)>& f) {
  std::vector<R> out(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) out[i] = f(i);
  };
  const int t = std::max(1, std::min<int>(jobs, int(n)));
  std::vector<std::jthread> pool;
  for (int k = 1; k < t; ++k) pool.emplace_back(work);
  work();
  return out;
}

// ---------------------------------------------------------------------------
// shared helpers

inline HeatVector weighted(const ExperimentConfig& c, HeatVector q) {
  q = with_default_weights(q, model_labels(c.model.kind), c.theta0);
  if (c.beta0) q.beta0 = *c.beta0;
  if (c.gamma0) q.gamma0 = *c.gamma0;
  return q;
}

inline HeatVector heat_at(const ExperimentConfig& c, double lambda) {
  if (c.heat) return weighted(c, *c.heat);
  if (!c.scaling) throw Error(ErrorCode::ConfigError, "field 'heat': give heat or heat_scaling");
  HeatVector u = weighted(c, {});
  u.dQ_A2 = c.scaling->direction(0);
  u.dQ_B1 = c.scaling->direction(1);
  u.dQ_B2 = c.scaling->direction(2);
  const double s = std::pow(lambda, c.scaling->exponent) / u.norm();
  u.dQ_A2 *= s;
  u.dQ_B1 *= s;
  u.dQ_B2 *= s;
  return u;
}

inline AsymptoticDensities densities_for(const ExperimentConfig& c, const ModelSpec& spec) {
  return estimate_densities(spec, c.theta0, c.lambda_ref, c.densities, c.richardson);
}

inline std::string source_tag(const AsymptoticDensities& d) {
  return d.source == "numeric" ? "numeric@" + format_double(d.lambda_ref) : d.source;
}

// ---------------------------------------------------------------------------
// coeffs

inline CommandResult cmd_coeffs(const ExperimentConfig& c) {
  CommandResult r;
  r.table.columns = {"model", "theta0", "angle", "C_AA", "C_AB1", "C_AB2", "C_BB11", "C_BB12", "C_BB22",
                     "source", "reference_name", "reference", "rel_dev", "config_hash", "version"};
  std::vector<double> angles = c.angles;
  if (angles.empty()) angles.push_back(c.model.angle);
  if (c.model.kind != ModelKind::SpinHalfBath && !c.angles.empty())
    throw Error(ErrorCode::ConfigError, "field 'angles': only spin_half_bath takes an angle sweep");
  for (double a : angles) {
    ModelSpec s = c.model;
    s.angle = a;
    const auto d = densities_for(c, s);
    const auto k = fgcb_coefficients(d, c.theta0);
    std::vector<Cell> row{std::string(model_name(s.kind)), join(c.theta0),
                          s.kind == ModelKind::SpinHalfBath ? Cell(a) : Cell(),
                          k.C_AA, k.C_AB[0], k.C_AB[1], k.C_BB[0][0], k.C_BB[0][1], k.C_BB[1][1], source_tag(d)};
    try {
      const auto ref = analytic_reference(s, c.theta0);
      if (ref.C) {
        const double mine = ref.C_name == "C_AA" ? k.C_AA : k.C_BB[0][0];
        row.insert(row.end(), {ref.C_name, *ref.C, std::abs(mine - *ref.C) / std::abs(*ref.C)});
        r.plot.add(std::string(model_name(s.kind)) + ":" + ref.C_name, a, mine);
      } else {
        row.insert(row.end(), {Cell(), Cell(), Cell()});
      }
    } catch (const Error&) {
      row.insert(row.end(), {Cell(), Cell(), Cell()});
    }
    row.insert(row.end(), {hex64(c.hash), std::string(kVersion)});
    r.table.rows.push_back(std::move(row));
  }
  return r;
}

// ---------------------------------------------------------------------------
// bound

inline CommandResult cmd_bound(const ExperimentConfig& c) {
  CommandResult r;
  r.table.columns = {"lambda", "dQ_A2", "dQ_B1", "dQ_B2", "Q_norm", "gcb", "fgcb", "form", "window_lo", "window_hi",
                     "in_window", "source", "config_hash", "version"};
  if (c.lambdas.empty()) throw Error(ErrorCode::ConfigError, "field 'lambdas': missing");
  const auto d = densities_for(c, c.model);
  const auto k = fgcb_coefficients(d, c.theta0);
  for (double lam : c.lambdas) {
    const auto q = heat_at(c, lam);
    const double g = gcb_bound(q, d.labels, c.theta0), f = fgcb_bound(q, d.labels, c.theta0, lam, k);
    const double lo = 3 * std::pow(lam, 5.0 / 8.0), hi = lam / 3;
    r.table.rows.push_back({lam, q.dQ_A2, q.dQ_B1, q.dQ_B2, q.norm(), g, f, coefficient_form(k, q), lo, hi,
                            q.norm() >= lo && q.norm() <= hi, source_tag(d), hex64(c.hash), std::string(kVersion)});
    r.plot.add("gcb", lam, g);
    r.plot.add("fgcb", lam, f);
  }
  return r;
}

// ---------------------------------------------------------------------------
// protocol

struct ProtocolRun {
  double lambda = 0;
  std::string status = "ok";
  std::string error;
  HeatVector target;
  ProtocolOutcome outcome;
  AchievabilityReport report;
  double heat_error_ratio = 0;  // ||achieved - target|| / (||Q||^2 / lambda)
  double form_per_norm2 = 0;    // coefficient form / ||Q||^2
  int solver_iterations = 0;
};

inline ProtocolRun run_protocol(const ExperimentConfig& c, const FgcbCoefficients& k, double lambda) {
  ProtocolRun run;
  run.lambda = lambda;
  try {
    const auto m = instantiate(c.model, lambda);
    run.target = heat_at(c, lambda);
    const auto s0 = build_thermal_state(m.obs, c.theta0, SpectrumMode::Compressed);
    const auto sol = solve_ideal_final_temperature(m.obs, c.theta0, run.target, lambda, c.solver);
    run.solver_iterations = sol.iterations;
    const auto sl = build_thermal_state(m.obs, sol.theta_lambda, SpectrumMode::Compressed);
    ProtocolOptions po;
    po.log_mass_cut = c.log_mass_cut;
    po.max_stored_pieces = 0;
    run.outcome = build_optimal_protocol(m.obs, s0, sl, po);
    run.report = achievability_report(run.outcome, run.target, lambda, k);
    const double n2 = run.target.norm2();
    run.heat_error_ratio = n2 > 0 ? run.report.heat_error_norm / (n2 / lambda) : 0.0;
    run.form_per_norm2 = n2 > 0 ? run.report.coefficient_form / n2 : 0.0;
    spdlog::info("lambda={} D={} pieces={}", lambda, run.outcome.D_to_ideal, run.outcome.pieces);
  } catch (const Error& e) {
    run.status = error_name(e.code());
    run.error = e.what();
    spdlog::warn("lambda={} failed: {}", lambda, e.what());
  }
  return run;
}

inline std::vector<ProtocolRun> run_protocols(const ExperimentConfig& c, int jobs) {
  if (c.lambdas.empty()) throw Error(ErrorCode::ConfigError, "field 'lambdas': missing");
  const auto d = densities_for(c, c.model);
  const auto k = fgcb_coefficients(d, c.theta0);
  std::function<ProtocolRun(std::size_t)> f = [&](std::size_t i) { return run_protocol(c, k, c.lambdas[i]); };
  return parallel_map<ProtocolRun>(c.lambdas.size(), jobs, f);
}

inline Table protocol_table(const ExperimentConfig& c, const std::vector<ProtocolRun>& runs) {
  Table t;
  t.columns = {"lambda", "status", "error", "path", "theta_lambda", "eta_initial", "rho_opt_expectations",
               "eta_ideal", "target_dQ_A2", "target_dQ_B1", "target_dQ_B2", "achieved_dQ_A2", "achieved_dQ_B1",
               "achieved_dQ_B2", "heat_error_ratio", "work", "gcb", "fgcb", "deficit", "scaled_deficit",
               "form_per_norm2", "entropy_initial", "entropy_final", "entropy_residual", "D_to_ideal",
               "D_to_initial", "second_law_lhs", "second_law_residual", "xi_lambda", "xi_converged", "eta_gap",
               "degenerate_spread", "total_mass", "unassigned_mass", "monotone", "pieces", "in_window",
               "solver_iterations", "config_hash", "version"};
  for (const auto& r : runs) {
    if (r.status != "ok") {
      std::vector<Cell> row(t.columns.size());
      row[0] = r.lambda;
      row[1] = r.status;
      row[2] = r.error;
      row[t.columns.size() - 2] = hex64(c.hash);
      row[t.columns.size() - 1] = std::string(kVersion);
      t.rows.push_back(std::move(row));
      continue;
    }
    const auto& o = r.outcome;
    const auto& a = r.report;
    t.rows.push_back({r.lambda, r.status, std::string(), o.path, join(o.theta_lambda), join(o.eta_initial),
                      join(o.rho_opt_expectations), join(o.eta_ideal), r.target.dQ_A2, r.target.dQ_B1,
                      r.target.dQ_B2, o.achieved_heats.dQ_A2, o.achieved_heats.dQ_B1, o.achieved_heats.dQ_B2,
                      r.heat_error_ratio, o.work, a.gcb, a.fgcb, a.deficit, a.scaled_deficit, r.form_per_norm2,
                      o.entropy_initial, o.entropy_final, a.entropy_residual, o.D_to_ideal, o.D_to_initial,
                      o.second_law_lhs, a.second_law_residual, join(o.xi_lambda), o.xi_converged, o.eta_gap,
                      o.degenerate_spread, o.total_mass, o.unassigned_mass, o.monotone,
                      std::int64_t(o.pieces), a.in_window, std::int64_t(r.solver_iterations), hex64(c.hash),
                      std::string(kVersion)});
  }
  return t;
}

inline CommandResult cmd_protocol(const ExperimentConfig& c, int jobs) {
  CommandResult r;
  const auto runs = run_protocols(c, jobs);
  r.table = protocol_table(c, runs);
  for (const auto& run : runs) {
    if (run.status != "ok") {
      r.exit_code = kExitNumerical;
      continue;
    }
    r.plot.add("D_to_ideal", run.lambda, run.outcome.D_to_ideal);
    r.plot.add("scaled_deficit", run.lambda, run.report.scaled_deficit);
    r.plot.add("heat_error_ratio", run.lambda, run.heat_error_ratio);
  }
  return r;
}

// ---------------------------------------------------------------------------
// sweep

struct LineFit {
  double slope = 0, intercept = 0, rms_residual = 0;
  int points = 0;
};

// Least squares y = slope x + intercept.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const Eigen::Index n = Eigen::Index(x.size());
  if (n < 2) throw Error(ErrorCode::InsufficientPoints, "need at least two points for a fit");
  Eigen::MatrixXd A(n, 2);
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    A(i, 0) = x[size_t(i)];
    A(i, 1) = 1;
    b(i) = y[size_t(i)];
  }
  Eigen::Vector2d s = A.colPivHouseholderQr().solve(b);
  LineFit f;
  f.slope = s(0);
  f.intercept = s(1);
  f.rms_residual = std::sqrt((A * s - b).squaredNorm() / double(n));
  f.points = int(n);
  return f;
}

inline LineFit loglog_fit(const std::vector<double>& x, const std::vector<double>& y) {
  std::vector<double> lx, ly;
  for (size_t i = 0; i < x.size(); ++i)
    if (x[i] > 0 && y[i] > 0) {
      lx.push_back(std::log(x[i]));
      ly.push_back(std::log(y[i]));
    }
  return fit_line(lx, ly);
}

inline ordered_json fit_json(const LineFit& f) {
  ordered_json j;
  j["slope"] = f.slope;
  j["intercept"] = f.intercept;
  j["rms_residual"] = f.rms_residual;
  j["points"] = f.points;
  return j;
}

struct SweepSummary {
  LineFit D_fit, deficit_fit;
  double expected_D_slope = -0.5;
  double plateau = 0, form_value = 0, plateau_rel_dev = 0;
  double heat_ratio_first = 0, heat_ratio_last = 0;
  int failed_runs = 0;
};

inline SweepSummary summarize_sweep(const ExperimentConfig& c, const std::vector<ProtocolRun>& runs) {
  SweepSummary s;
  std::vector<double> lam, D, def;
  for (const auto& r : runs) {
    if (r.status != "ok") {
      s.failed_runs++;
      continue;
    }
    lam.push_back(r.lambda);
    D.push_back(r.outcome.D_to_ideal);
    def.push_back(r.report.scaled_deficit);
  }
  if (lam.size() < 5) throw Error(ErrorCode::InsufficientPoints, "sweep needs at least five successful lambda points");
  s.D_fit = loglog_fit(lam, D);
  s.deficit_fit = loglog_fit(lam, def);
  const double p = c.scaling ? c.scaling->exponent : 0.0;
  s.expected_D_slope = std::max(-0.5, 2 * p - 2);
  const ProtocolRun* first = nullptr;
  const ProtocolRun* last = nullptr;
  for (const auto& r : runs)
    if (r.status == "ok") {
      if (!first) first = &r;
      last = &r;
    }
  s.plateau = last->report.scaled_deficit;
  s.form_value = last->form_per_norm2;
  s.plateau_rel_dev = std::abs(s.plateau - s.form_value) / std::abs(s.form_value);
  s.heat_ratio_first = first->heat_error_ratio;
  s.heat_ratio_last = last->heat_error_ratio;
  return s;
}

inline CommandResult cmd_sweep(const ExperimentConfig& c, int jobs) {
  if (c.lambdas.size() < 5) throw Error(ErrorCode::InsufficientPoints, "sweep needs at least five lambda points");
  CommandResult r;
  const auto runs = run_protocols(c, jobs);
  r.table = protocol_table(c, runs);
  const auto s = summarize_sweep(c, runs);
  ordered_json j;
  j["model"] = model_name(c.model.kind);
  j["config_hash"] = hex64(c.hash);
  j["version"] = kVersion;
  j["exponent"] = c.scaling ? c.scaling->exponent : 0.0;
  j["D_to_ideal_fit"] = fit_json(s.D_fit);
  j["expected_D_slope"] = s.expected_D_slope;
  j["scaled_deficit_fit"] = fit_json(s.deficit_fit);
  j["plateau"] = {{"measured", s.plateau}, {"form_value", s.form_value}, {"rel_dev", s.plateau_rel_dev}};
  j["heat_error_ratio"] = {{"first", s.heat_ratio_first},
                           {"last", s.heat_ratio_last},
                           {"reduction", s.heat_ratio_last != 0 ? s.heat_ratio_first / s.heat_ratio_last : 0.0}};
  j["failed_runs"] = s.failed_runs;
  r.report = j;
  for (const auto& run : runs)
    if (run.status == "ok") {
      r.plot.add("D_to_ideal", run.lambda, run.outcome.D_to_ideal);
      r.plot.add("scaled_deficit", run.lambda, run.report.scaled_deficit);
      r.plot.add("form_per_norm2", run.lambda, run.form_per_norm2);
      r.plot.add("heat_error_ratio", run.lambda, run.heat_error_ratio);
    }
  if (s.failed_runs) r.exit_code = kExitNumerical;
  return r;
}

// ---------------------------------------------------------------------------
// verify

inline CommandResult cmd_verify(const ExperimentConfig& c, std::uint64_t seed, int jobs) {
  CommandResult r;
  r.table.columns = {"invariant", "subject", "cases", "failures", "worst", "tolerance", "passed", "config_hash",
                     "version"};
  auto add = [&](const std::string& inv, const std::string& subj, const SuiteResult& s, double tol) {
    r.table.rows.push_back({inv, subj, std::int64_t(s.cases), std::int64_t(s.failures), s.worst, tol, s.passed(),
                            hex64(c.hash), std::string(kVersion)});
    if (!s.passed()) r.exit_code = kExitInvariant;
  };
  add("pythagorean", "random dense d=4..16", pythagorean_suite(200, seed, c.pythagorean_tol), c.pythagorean_tol);

  auto fixtures = default_fixtures();
  ModelFixture own{c.model, c.theta0, 0};
  for (const auto& f : fixtures)
    if (f.spec.kind == c.model.kind) own.lambda = f.lambda;
  fixtures.push_back(own);
  std::function<std::pair<SuiteResult, SuiteResult>(std::size_t)> per = [&](std::size_t i) {
    const auto& f = fixtures[i];
    const auto m = instantiate(f.spec, f.lambda);
    auto fh = fisher_hessian_grid(m.obs, f.theta0, c.fisher_tol);
    const auto d = estimate_densities(f.spec, f.theta0, 0, DensityMode::Analytic);
    auto fg = fgcb_below_gcb(d, f.theta0, f.lambda, 1000, seed + i);
    return std::make_pair(fh, fg);
  };
  const auto res = parallel_map<std::pair<SuiteResult, SuiteResult>>(fixtures.size(), jobs, per);
  for (size_t i = 0; i < fixtures.size(); ++i) {
    const std::string name = std::string(model_name(fixtures[i].spec.kind)) + (i + 1 == fixtures.size() ? " (config)" : "");
    add("fisher_hessian", name, res[i].first, c.fisher_tol);
    add("fgcb_le_gcb", name, res[i].second, 1e-12);
  }

  if (!c.lambdas.empty() && (c.heat || c.scaling)) {
    const auto runs = run_protocols(c, jobs);
    SuiteResult ent, sl;
    for (const auto& run : runs) {
      ent.cases++;
      sl.cases++;
      if (run.status != "ok") {
        ent.failures++;
        sl.failures++;
        continue;
      }
      ent.worst = std::max(ent.worst, run.report.entropy_residual);
      sl.worst = std::max(sl.worst, run.report.second_law_residual);
      if (!(run.report.entropy_residual <= c.entropy_tol)) ent.failures++;
      if (!(run.report.second_law_residual <= c.second_law_tol)) sl.failures++;
    }
    add("entropy_preservation", model_name(c.model.kind), ent, c.entropy_tol);
    add("second_law_equality", model_name(c.model.kind), sl, c.second_law_tol);
  }
  return r;
}

}  // namespace fbe::cli
