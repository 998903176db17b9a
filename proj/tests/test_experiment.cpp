#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "fedpoison/errors.hpp"
#include "fedpoison/experiment.hpp"

using namespace fedpoison;
using namespace fedpoison::experiment;
using json = nlohmann::ordered_json;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "fedpoison_test_experiment" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t line_count(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string config(const std::string& experiments) { return R"({"experiments": [)" + experiments + "]}"; }

const char* kSmallFederated = R"({
  "name": "small", "mode": "federated",
  "dataset": {"source": "synthetic", "classes": 4, "features": 8, "train_per_class": 100, "test_per_class": 25},
  "training": {"learning_rate": 0.05, "batch_size": 10},
  "federation": {"honest": 3, "malicious": 7, "rounds": 10},
  "attack": {"alphas": [0.6]},
  "seed": 5
})";

}  // namespace

TEST_CASE("minimal federated spec gets defaults") {
  const auto cfg = parse_config_text(config(R"({"name": "m", "mode": "federated", "dataset": {"source": "synthetic"}})"));
  REQUIRE(cfg.experiments.size() == 1);
  const auto& s = cfg.experiments[0];
  CHECK(s.federation.rounds == 10);
  CHECK(s.hyper.local_epochs == 3);
  CHECK(s.hyper.batch_size == 100);
  CHECK(s.federation.honest == 10);
  CHECK(s.alphas == std::vector<double>{0.0});
  CHECK(cfg.output_dir == "results");

  const auto echo = to_json(s);
  CHECK(echo["federation"]["rounds"] == 10);
  CHECK(echo["training"]["epochs"] == 3);
  CHECK(echo["attack"]["strategy"] == "swap");

  const auto central =
      parse_config_text(config(R"({"name": "c", "mode": "centralized", "dataset": {"source": "synthetic"}})"));
  CHECK(central.experiments[0].hyper.local_epochs == 25);
  CHECK(central.experiments[0].hyper.batch_size == 800);
}

TEST_CASE("config validation errors name the location") {
  auto expect_error = [](const std::string& text, const std::string& fragment) {
    try {
      parse_config_text(text, "cfg.json");
      FAIL("expected a config error for: " << text);
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK_MESSAGE(msg.find(fragment) != std::string::npos, msg);
    }
  };
  expect_error(config(R"({"name": "a", "mode": "federated", "dataset": {"source": "synthetic"}, "attack": {"alphas": [0.5, 1.3]}})"),
               "/experiments/0/attack/alphas/1");
  const std::string dup = R"({"name": "a", "mode": "federated", "dataset": {"source": "synthetic"}})";
  expect_error(config(dup + "," + dup), "duplicate experiment name");
  expect_error(config(R"({"name": "a", "mode": "federated", "dataset": {"source": "synthetic", "clases": 4}})"),
               "/experiments/0/dataset/clases: unknown key");
  expect_error(R"({"experiments": [], "outdir": 1})", "/experiments");
  expect_error(R"({"experiments": [{"name": "a",)", "line 1");
  expect_error(config(R"({"name": "a", "mode": "sideways", "dataset": {"source": "synthetic"}})"), "/experiments/0/mode");
  expect_error(config(R"({"name": "a", "mode": "federated", "dataset": {"source": "synthetic"}, "federation": {"c_h": 0}})"),
               "/experiments/0/federation/c_h");
  expect_error(config(R"({"name": "a", "mode": "federated", "dataset": {"source": "synthetic"}, "attack": {"drop_policy": "all"}})"),
               "drop_policy");
  expect_error(config(R"({"name": "a", "mode": "centralized", "dataset": {"source": "synthetic"}, "federation": {}})"),
               "federation");
  CHECK_THROWS_AS(parse_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("run ids") {
  CHECK(run_id("iid", 0.6, 0) == "iid_a0600_r0");
  CHECK(run_id("x", 0.0, 2) == "x_a0000_r2");
  CHECK(run_id("x", 1.0, 1) == "x_a1000_r1");
}

TEST_CASE("baseline plus attacked run yields per-class attack rates and plot data") {
  const auto dir = fresh_dir("pair");
  const auto cfg = parse_config_text(config(kSmallFederated));
  const auto reports = run_matrix(cfg.experiments, {dir, 2});
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].run_id == "small_a0000_r0");
  CHECK(reports[1].run_id == "small_a0600_r0");
  for (const auto& r : reports) CHECK_MESSAGE(r.ok, r.error);

  const auto& attacked = reports[1].json;
  CHECK(attacked["baseline_run"] == "small_a0000_r0");
  CHECK(reports[0].json["baseline_run"].is_null());
  const auto& per_class = attacked["final_metrics"]["per_class"];
  REQUIRE(per_class.size() == 4);
  for (const auto& c : per_class) CHECK(c.contains("poisoning_attack_rate"));
  CHECK(attacked["rounds"].size() == 10);
  CHECK(attacked["spec"]["federation"]["malicious"] == 7);

  CHECK(std::filesystem::exists(dir / "small_a0600_r0.json"));
  CHECK(line_count(slurp(dir / "rounds" / "small_a0600_r0.jsonl")) == 10);
  CHECK(std::filesystem::exists(dir / "models" / "small_a0600_r0.json"));
  CHECK(std::filesystem::exists(dir / "partitions" / "small_a0600_r0.json"));
  CHECK(line_count(slurp(dir / "plot" / "small_a0600_r0_accuracy.csv")) == 11);
  CHECK(line_count(slurp(dir / "plot" / "small_a0600_r0_attack_rate.csv")) == 5);
  CHECK_FALSE(std::filesystem::exists(dir / "plot" / "small_a0000_r0_attack_rate.csv"));

  const auto loaded = load_reports(dir);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[1]["run_id"] == "small_a0600_r0");
}

TEST_CASE("reruns are byte-identical apart from wall-clock") {
  const auto cfg = parse_config_text(config(kSmallFederated));
  const auto a = fresh_dir("rerun_a");
  const auto b = fresh_dir("rerun_b");
  auto strip = [](json j) {
    j.erase("wall_clock_seconds");
    return j.dump();
  };
  const auto ra = run_matrix(cfg.experiments, {a, 1});
  const auto rb = run_matrix(cfg.experiments, {b, 3});
  REQUIRE(ra.size() == rb.size());
  for (std::size_t i = 0; i < ra.size(); ++i) CHECK(strip(ra[i].json) == strip(rb[i].json));
  CHECK(slurp(a / "rounds" / "small_a0600_r0.jsonl") == slurp(b / "rounds" / "small_a0600_r0.jsonl"));
  CHECK(slurp(a / "models" / "small_a0600_r0.json") == slurp(b / "models" / "small_a0600_r0.json"));
}

TEST_CASE("target attack rate is non-decreasing across an alpha sweep") {
  auto cfg = parse_config_text(config(kSmallFederated));
  cfg.experiments[0].alphas = {0.4, 0.5, 0.6};
  const auto reports = run_matrix(cfg.experiments, {fresh_dir("sweep"), 2});
  REQUIRE(reports.size() == 4);
  double previous = 0.0;
  for (std::size_t i = 1; i < reports.size(); ++i) {
    REQUIRE(reports[i].ok);
    const double rate = reports[i].json["target_attack_rate"].get<double>();
    CHECK(rate >= previous);
    previous = rate;
  }
}

TEST_CASE("repetitions shift the seed and failures do not stop the matrix") {
  const auto dir = fresh_dir("mixed");
  const auto cfg = parse_config_text(config(R"(
    {"name": "broken", "mode": "centralized",
     "dataset": {"source": "csv", "path": "/nonexistent/data.csv", "label_column": "Attack_type"},
     "attack": {"alphas": [0.5]}},
    {"name": "ok", "mode": "centralized", "repetitions": 2, "seed": 10,
     "dataset": {"source": "synthetic", "classes": 3, "features": 4, "train_per_class": 40, "test_per_class": 10},
     "training": {"epochs": 5, "batch_size": 20}})"));
  const auto reports = run_matrix(cfg.experiments, {dir, 1});
  REQUIRE(reports.size() == 4);
  CHECK_FALSE(reports[0].ok);
  CHECK_FALSE(reports[1].ok);
  CHECK(reports[1].json["status"] == "failed");
  CHECK(reports[2].ok);
  CHECK(reports[3].ok);
  CHECK(reports[2].json["seed"] == 10);
  CHECK(reports[3].json["seed"] == 11);
}

TEST_CASE("plot data for baselines only and for many classes") {
  const auto dir = fresh_dir("plots");
  const auto cfg = parse_config_text(config(R"(
    {"name": "wide", "mode": "centralized",
     "dataset": {"source": "synthetic", "classes": 15, "features": 6, "train_per_class": 20, "test_per_class": 5},
     "training": {"epochs": 3, "batch_size": 50}})"));
  const auto base = run_matrix(cfg.experiments, {dir, 1});
  std::vector<json> docs{base[0].json};
  const auto notices = emit_plotdata(docs, dir / "only_base");
  CHECK(notices.size() == 1);
  CHECK_FALSE(std::filesystem::exists(dir / "only_base" / "wide_a0000_r0_attack_rate.csv"));

  auto attacked = cfg;
  attacked.experiments[0].alphas = {0.5};
  const auto both = run_matrix(attacked.experiments, {dir, 1});
  CHECK(line_count(slurp(dir / "plot" / "wide_a0500_r0_attack_rate.csv")) == 16);
}

TEST_CASE("csv datasets run through ingestion, binary collapse and oversampling") {
  const auto dir = fresh_dir("csv");
  {
    std::ofstream out(dir / "traffic.csv");
    out << "ip,proto,bytes,Attack_type\n";
    for (int i = 0; i < 120; ++i) {
      const char* label = i % 6 == 0 ? "DDoS" : (i % 6 == 1 ? "Backdoor" : "Normal");
      const double shift = label[0] == 'N' ? 0.0 : 5.0;
      out << "10.0.0." << i << "," << (i % 2 ? "tcp" : "udp") << "," << shift + (i % 7) * 0.1 << "," << label << "\n";
    }
  }
  {
    std::ofstream out(dir / "cfg.json");
    out << R"({"output_dir": "out", "experiments": [
      {"name": "bin", "mode": "centralized", "classification": "binary",
       "dataset": {"source": "csv", "path": "traffic.csv", "label_column": "Attack_type", "drop_columns": ["ip"]},
       "training": {"epochs": 5, "batch_size": 16}}]})";
  }
  const auto cfg = parse_config(dir / "cfg.json");
  const auto prepared = prepare_data(cfg.experiments[0], cfg.experiments[0].seed);
  CHECK(prepared.train.class_names == std::vector<std::string>{"Attack", "Normal"});
  const auto counts = prepared.train.class_counts();
  CHECK(counts[0] == counts[1]);
  const auto reports = run_matrix(cfg.experiments, {dir / "out", 1});
  REQUIRE(reports.size() == 1);
  CHECK_MESSAGE(reports[0].ok, reports[0].error);
}
