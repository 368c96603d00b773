#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "fbe/cli.hpp"

namespace {

void init_logging() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("fbe"));
  const char* env = std::getenv("FBE_LOG");
  const std::string level = env ? env : "error";
  if (level == "debug")
    spdlog::set_level(spdlog::level::debug);
  else if (level == "info")
    spdlog::set_level(spdlog::level::info);
  else
    spdlog::set_level(spdlog::level::err);
  spdlog::set_pattern("[%l] %v");
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fbe::Error(fbe::ErrorCode::ConfigError, "cannot write '" + path + "'");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fbe::cli;
  init_logging();
  CLI::App app{"Finite-bath heat engine bounds and optimal protocols"};
  app.require_subcommand(1);
  std::string config_path, out_path, format, plot_path;
  int jobs = 1;
  std::uint64_t seed = 12345;
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--out", out_path, "output path (default: config output.path or stdout)");
  app.add_option("--format", format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "seed for the random-matrix invariant suites");
  app.add_option("--emit-plot-data", plot_path, "write long-format plot data CSV");
  auto* coeffs = app.add_subcommand("coeffs", "second-order coefficients");
  auto* bound = app.add_subcommand("bound", "GCB and FGCB per lambda");
  auto* protocol = app.add_subcommand("protocol", "optimal protocol runs");
  auto* sweep = app.add_subcommand("sweep", "scaling fits over a lambda sweep");
  auto* verify = app.add_subcommand("verify", "invariant suites");
  for (auto* s : {coeffs, bound, protocol, sweep, verify}) s->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    ExperimentConfig cfg;
    if (!config_path.empty()) {
      cfg = load_config(config_path);
    } else if (verify->parsed()) {
      cfg = parse_config(json::parse(R"({"schema_version": 1, "model": {"kind": "iid_two_level", "omega_h": 1.618033988749895},
                                       "theta0": [1.0, 0.5], "heat": {"dQ_A2": 0.5}, "lambdas": [16, 64, 256]})"));
    } else {
      throw fbe::Error(fbe::ErrorCode::ConfigError, "--config is required for this command");
    }
    if (!format.empty()) cfg.format = format;
    if (!out_path.empty()) cfg.out = out_path;

    CommandResult res;
    if (coeffs->parsed()) res = cmd_coeffs(cfg);
    if (bound->parsed()) res = cmd_bound(cfg);
    if (protocol->parsed()) res = cmd_protocol(cfg, jobs);
    if (sweep->parsed()) res = cmd_sweep(cfg, jobs);
    if (verify->parsed()) res = cmd_verify(cfg, seed, jobs);

    std::string text;
    if (cfg.format == "json") {
      ordered_json j;
      j["config_hash"] = hex64(cfg.hash);
      j["version"] = kVersion;
      j["rows"] = to_json(res.table);
      if (!res.report.is_null()) j["report"] = res.report;
      text = j.dump(2) + "\n";
    } else {
      text = to_csv(res.table);
      if (!res.report.is_null()) {
        if (cfg.out.empty() || cfg.out == "-")
          std::cerr << res.report.dump(2) << "\n";
        else
          write_text(cfg.out + ".report.json", res.report.dump(2) + "\n");
      }
    }
    write_text(cfg.out, text);
    if (!plot_path.empty()) write_text(plot_path, res.plot.to_csv());
    return res.exit_code;
  } catch (const fbe::Error& e) {
    spdlog::error("{}", e.what());
    const auto c = e.code();
    if (c == fbe::ErrorCode::ConfigError || c == fbe::ErrorCode::InvalidModel) return kExitConfig;
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "ConfigError: " << e.what() << "\n";
    return kExitConfig;
  }
}
