#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fedpoison/attack.hpp"
#include "fedpoison/data.hpp"
#include "fedpoison/federation.hpp"
#include "json.hpp"

namespace fedpoison::experiment {

enum class Mode { centralized, federated };
enum class Classification { multiclass, binary };

struct SyntheticSource {
  int classes = 4;
  int features = 8;
  int train_per_class = 250;
  int test_per_class = 50;
  double separation = 6.0;
};

struct CsvSource {
  std::filesystem::path path;
  std::string label_column;
  std::vector<std::string> drop_columns;
  double train_fraction = 0.8;
  bool stratified = false;
  bool smote = true;
  int smote_k = 5;
};

struct DatasetSpec {
  enum class Kind { synthetic, csv };
  Kind kind = Kind::synthetic;
  SyntheticSource synthetic;
  CsvSource csv;
};

struct FederationSettings {
  int honest = 10;
  int malicious = 0;
  double c_h = 1.0;
  double c_m = 1.0;
  int rounds = 10;
  data::Distribution distribution = data::Distribution::iid;
  double beta = 0.5;
};

struct ExperimentSpec {
  std::string name;
  Mode mode = Mode::federated;
  Classification classification = Classification::multiclass;
  DatasetSpec dataset;
  federation::ModelSpec model;
  nn::TrainingHyperparams hyper;
  FederationSettings federation;
  attack::AttackConfig attack;  // alpha is taken from `alphas`
  std::vector<double> alphas{0.0};
  int repetitions = 1;
  std::uint64_t seed = 0;
};

/// Spec with every default filled in, in config-file layout.
nlohmann::ordered_json to_json(const ExperimentSpec& spec);

struct ConfigFile {
  std::vector<ExperimentSpec> experiments;
  std::filesystem::path output_dir = "results";
};

/// Config files are JSON; see README for the schema. Unknown keys, bad values and
/// duplicate names raise ConfigError naming the JSON location.
ConfigFile parse_config_text(const std::string& text, const std::string& source = "<config>");
ConfigFile parse_config(const std::filesystem::path& path);

struct PreparedData {
  data::LabeledDataset train;
  data::LabeledDataset test;
  std::vector<std::string> log;
  std::vector<std::string> warnings;
};

/// Ingests or generates the dataset, runs the preprocessing pipeline and the
/// optional binary collapse and oversampling.
PreparedData prepare_data(const ExperimentSpec& spec, std::uint64_t seed);

struct RunReport {
  std::string run_id;
  bool ok = false;
  std::string error;
  nlohmann::ordered_json json;  // the document written to <run_id>.json
};

struct RunOptions {
  std::filesystem::path output_dir = "results";
  int jobs = 1;
};

/// Identifier for one (experiment, alpha, repetition) cell, e.g. "iid_a0600_r0".
std::string run_id(const std::string& name, double alpha, int repetition);

/// Executes every (spec, alpha, repetition) cell, baselines first. Each attacked run
/// carries per-class poisoning attack rates against its alpha = 0 twin. Writes
/// reports, round logs, models, partitions and plot data under output_dir.
std::vector<RunReport> run_matrix(const std::vector<ExperimentSpec>& specs, const RunOptions& options);

/// Writes <run>_accuracy.csv (round,accuracy) and <run>_attack_rate.csv
/// (class,attack_rate_percent) into `dir`. Returns notices about omitted files.
std::vector<std::string> emit_plotdata(const std::vector<nlohmann::ordered_json>& reports,
                                       const std::filesystem::path& dir);

/// Loads every run report (*.json with "kind": "run_report") from a directory, sorted by file name.
std::vector<nlohmann::ordered_json> load_reports(const std::filesystem::path& dir);

/// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace fedpoison::experiment
