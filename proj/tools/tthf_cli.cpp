#include "tthf/experiment.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>

namespace {

using nlohmann::json;

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const tthf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const tthf::InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

tthf::ExperimentConfig load(const std::string& path, int threads, const std::string& output) {
  auto cfg = tthf::load_config(path);
  if (threads > 0) cfg.threads = threads;
  if (!output.empty()) cfg.output_dir = output;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-timescale hybrid federated learning simulator"};
  app.set_version_flag("--version", std::string(tthf::kVersion));
  app.require_subcommand(1);

  std::string config;
  std::string output;
  int threads = 0;

  auto* run = app.add_subcommand("run", "Run every seed of a configuration");
  run->add_option("config", config, "JSON configuration file")->required();
  run->add_option("-o,--output", output, "Output directory (overrides output_dir)");
  run->add_option("-j,--threads", threads, "Worker threads (overrides threads)")->check(CLI::PositiveNumber);

  std::string sweep_path;
  std::string sweep_values;
  auto* sweep = app.add_subcommand("sweep", "Run a configuration once per value of one field");
  sweep->add_option("config", config, "JSON configuration file")->required();
  sweep->add_option("--path", sweep_path, "Dotted field path (overrides sweep.path)");
  sweep->add_option("--values", sweep_values, "JSON array of values (overrides sweep.values)");
  sweep->add_option("-o,--output", output, "Output root directory");
  sweep->add_option("-j,--threads", threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string trace_a;
  std::string trace_b;
  std::string report_path;
  auto* compare = app.add_subcommand("compare", "Compare two trace CSVs (a minus b)");
  compare->add_option("trace_a", trace_a, "First trace CSV")->required()->check(CLI::ExistingFile);
  compare->add_option("trace_b", trace_b, "Second trace CSV")->required()->check(CLI::ExistingFile);
  compare->add_option("-o,--output", report_path, "Write the JSON report here instead of stdout");

  auto* bounds = app.add_subcommand("bounds-report", "Print constants and convergence certificates");
  bounds->add_option("config", config, "JSON configuration file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  if (*run) {
    return guarded([&] { return tthf::run_experiment(load(config, threads, output), std::cerr); });
  }
  if (*sweep) {
    return guarded([&] {
      const auto cfg = load(config, threads, output);
      const json& spec = cfg.raw.contains("sweep") ? cfg.raw["sweep"] : json::object();
      std::string path = sweep_path;
      if (path.empty() && spec.contains("path")) path = spec["path"].get<std::string>();
      if (path.empty()) throw tthf::ConfigError("sweep.path", "missing required field");
      json values = sweep_values.empty() ? spec.value("values", json()) : json::parse(sweep_values);
      return tthf::run_sweep(cfg, path, values, std::cerr);
    });
  }
  if (*compare) {
    return guarded([&] {
      const auto report = tthf::compare_runs(tthf::read_trace_csv(trace_a), tthf::read_trace_csv(trace_b));
      const json j = tthf::to_json(report);
      if (report_path.empty()) {
        std::cout << std::setw(2) << j << '\n';
      } else {
        std::ofstream(report_path) << std::setw(2) << j << '\n';
      }
      return 0;
    });
  }
  if (*bounds) {
    return guarded([&] {
      std::cout << std::setw(2) << tthf::bounds_report(tthf::load_config(config)) << '\n';
      return 0;
    });
  }
  return 2;
}
