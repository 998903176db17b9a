#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "fedpoison/errors.hpp"
#include "fedpoison/experiment.hpp"

namespace fx = fedpoison::experiment;

namespace {

constexpr int kOk = 0;
constexpr int kRunFailed = 1;
constexpr int kConfigError = 2;

fx::ConfigFile load(const std::string& path, std::optional<std::uint64_t> seed) {
  auto cfg = fx::parse_config(path);
  if (seed)
    for (auto& spec : cfg.experiments) spec.seed = *seed;
  return cfg;
}

int count_runs(const fx::ExperimentSpec& spec) {
  std::set<double> alphas{0.0};
  alphas.insert(spec.alphas.begin(), spec.alphas.end());
  return static_cast<int>(alphas.size()) * spec.repetitions;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning poisoning experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string report_dir;
  std::optional<std::uint64_t> seed;
  std::string out;
  int jobs = 1;

  auto* run = app.add_subcommand("run", "Run every experiment in a config file");
  run->add_option("config", config_path, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the base seed of every experiment");
  run->add_option("--out", out, "Output directory (overrides output_dir)");
  run->add_option("--jobs", jobs, "Runs executed in parallel")->check(CLI::PositiveNumber);

  auto* validate = app.add_subcommand("validate", "Check a config file and print it with defaults filled in");
  validate->add_option("config", config_path, "Config file (JSON)")->required()->check(CLI::ExistingFile);
  validate->add_option("--seed", seed, "Override the base seed of every experiment");

  auto* plot = app.add_subcommand("plotdata", "Write CSV plot series from a directory of run reports");
  plot->add_option("report-dir", report_dir, "Directory holding <run_id>.json reports")->required();
  plot->add_option("--out", out, "Directory for the CSV files (default <report-dir>/plot)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*validate) {
      const auto cfg = load(config_path, seed);
      nlohmann::ordered_json echo;
      echo["output_dir"] = cfg.output_dir.generic_string();
      echo["experiments"] = nlohmann::ordered_json::array();
      for (const auto& spec : cfg.experiments) echo["experiments"].push_back(fx::to_json(spec));
      std::cout << echo.dump(2) << "\n";
      return kOk;
    }

    if (*run) {
      const auto cfg = load(config_path, seed);
      fx::RunOptions options;
      options.output_dir = out.empty() ? cfg.output_dir : std::filesystem::path(out);
      options.jobs = jobs;
      int total = 0;
      for (const auto& spec : cfg.experiments) total += count_runs(spec);
      std::cerr << "running " << total << " runs into " << options.output_dir.string() << "\n";
      const auto reports = fx::run_matrix(cfg.experiments, options);
      int failed = 0;
      for (const auto& r : reports) {
        if (r.ok) {
          std::cout << r.run_id << " ok";
          const auto& m = r.json.at("final_metrics");
          std::cout << " accuracy=" << m.at("accuracy").get<double>();
          if (r.json.contains("target_attack_rate")) std::cout << " target_attack_rate=" << r.json.at("target_attack_rate").dump();
          std::cout << "\n";
        } else {
          ++failed;
          std::cout << r.run_id << " FAILED: " << r.error << "\n";
        }
      }
      return failed ? kRunFailed : kOk;
    }

    if (*plot) {
      const auto reports = fx::load_reports(report_dir);
      if (reports.empty()) {
        std::cerr << "no run reports found in " << report_dir << "\n";
        return kRunFailed;
      }
      const std::filesystem::path dir = out.empty() ? std::filesystem::path(report_dir) / "plot" : std::filesystem::path(out);
      for (const auto& notice : fx::emit_plotdata(reports, dir)) std::cerr << "note: " << notice << "\n";
      std::cout << "wrote plot data for " << reports.size() << " reports to " << dir.string() << "\n";
      return kOk;
    }
  } catch (const fedpoison::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunFailed;
  }
  return kOk;
}
