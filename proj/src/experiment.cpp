#include "fedpoison/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "fedpoison/errors.hpp"
#include "fedpoison/rng.hpp"

namespace fedpoison::experiment {

using json = nlohmann::ordered_json;

namespace {

// ---------------------------------------------------------------------------
// Config reading with location-aware diagnostics.

class Section {
 public:
  Section(const json& node, std::string where, const std::string& source)
      : node_(node), where_(std::move(where)), source_(source) {
    if (!node_.is_object()) fail("", "expected an object");
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ConfigError(source_ + ": " + path(key) + ": " + what);
  }

  std::string path(const std::string& key) const { return key.empty() ? (where_.empty() ? "/" : where_) : where_ + "/" + key; }

  bool has(const std::string& key) {
    known_.insert(key);
    return node_.contains(key);
  }

  const json& at(const std::string& key) {
    known_.insert(key);
    if (!node_.contains(key)) fail(key, "missing required key");
    return node_.at(key);
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    if (!has(key)) {
      if (!fallback) fail(key, "missing required key");
      return *fallback;
    }
    const auto& v = node_.at(key);
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }

  std::int64_t integer(const std::string& key, std::int64_t fallback) {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_number_integer()) fail(key, "expected an integer");
    return v.get<std::int64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const auto& v = node_.at(key);
    if (!v.is_boolean()) fail(key, "expected true or false");
    return v.get<bool>();
  }

  Section child(const std::string& key) {
    known_.insert(key);
    static const json empty = json::object();
    return Section(node_.contains(key) ? node_.at(key) : empty, path(key), source_);
  }

  /// Rejects keys nobody asked about.
  void finish() const {
    for (const auto& [key, value] : node_.items())
      if (!known_.contains(key)) fail(key, "unknown key");
  }

  void check(bool ok, const std::string& key, const std::string& what) const {
    if (!ok) fail(key, what);
  }

 private:
  const json& node_;
  std::string where_;
  const std::string& source_;
  std::set<std::string> known_;
};

int to_int(Section& s, const std::string& key, std::int64_t fallback, std::int64_t lo) {
  const auto v = s.integer(key, fallback);
  s.check(v >= lo && v <= 1'000'000'000, key, "must be >= " + std::to_string(lo));
  return static_cast<int>(v);
}

DatasetSpec parse_dataset(Section s) {
  DatasetSpec d;
  const auto source = s.string("source");
  if (source == "synthetic") {
    d.kind = DatasetSpec::Kind::synthetic;
    auto& syn = d.synthetic;
    syn.classes = to_int(s, "classes", syn.classes, 2);
    syn.features = to_int(s, "features", syn.features, 1);
    syn.train_per_class = to_int(s, "train_per_class", syn.train_per_class, 1);
    syn.test_per_class = to_int(s, "test_per_class", syn.test_per_class, 1);
    syn.separation = s.number("separation", syn.separation);
    s.check(syn.separation >= 0.0, "separation", "must be >= 0");
  } else if (source == "csv") {
    d.kind = DatasetSpec::Kind::csv;
    auto& csv = d.csv;
    csv.path = s.string("path");
    csv.label_column = s.string("label_column");
    if (s.has("drop_columns")) {
      const auto& cols = s.at("drop_columns");
      s.check(cols.is_array(), "drop_columns", "expected an array of strings");
      for (const auto& c : cols) {
        s.check(c.is_string(), "drop_columns", "expected an array of strings");
        csv.drop_columns.push_back(c.get<std::string>());
      }
    }
    csv.train_fraction = s.number("train_fraction", csv.train_fraction);
    s.check(csv.train_fraction > 0.0 && csv.train_fraction < 1.0, "train_fraction", "must lie in (0, 1)");
    csv.stratified = s.boolean("stratified", csv.stratified);
    csv.smote = s.boolean("smote", csv.smote);
    csv.smote_k = to_int(s, "smote_k", csv.smote_k, 1);
  } else {
    s.fail("source", "expected \"synthetic\" or \"csv\"");
  }
  s.finish();
  return d;
}

attack::DropPolicy parse_drop_policy(Section& s) {
  if (!s.has("drop_policy")) return attack::DropPolicy::none();
  const auto& v = s.at("drop_policy");
  if (v.is_string() && v.get<std::string>() == "none") return attack::DropPolicy::none();
  if (v.is_object() && v.size() == 1 && v.contains("top_ranked") && v.at("top_ranked").is_number_integer() &&
      v.at("top_ranked").get<std::int64_t>() >= 0)
    return attack::DropPolicy::top_ranked(static_cast<int>(v.at("top_ranked").get<std::int64_t>()));
  s.fail("drop_policy", "expected \"none\" or {\"top_ranked\": <non-negative integer>}");
}

ExperimentSpec parse_experiment(Section s) {
  ExperimentSpec spec;
  spec.name = s.string("name");
  s.check(!spec.name.empty() && spec.name.find_first_of("/\\ ") == std::string::npos, "name",
          "must be non-empty without spaces or slashes");

  const auto mode = s.string("mode");
  if (mode == "federated") spec.mode = Mode::federated;
  else if (mode == "centralized") spec.mode = Mode::centralized;
  else s.fail("mode", "expected \"federated\" or \"centralized\"");

  const auto cls = s.string("classification", "multiclass");
  if (cls == "multiclass") spec.classification = Classification::multiclass;
  else if (cls == "binary") spec.classification = Classification::binary;
  else s.fail("classification", "expected \"multiclass\" or \"binary\"");

  spec.dataset = parse_dataset(s.child("dataset"));

  {
    auto m = s.child("model");
    if (m.has("hidden")) {
      const auto& h = m.at("hidden");
      m.check(h.is_array(), "hidden", "expected an array of positive integers");
      spec.model.hidden.clear();
      for (const auto& w : h) {
        m.check(w.is_number_integer() && w.get<std::int64_t>() >= 1, "hidden", "expected positive integers");
        spec.model.hidden.push_back(static_cast<int>(w.get<std::int64_t>()));
      }
    }
    spec.model.init_range = m.number("init_range", spec.model.init_range);
    m.check(spec.model.init_range > 0.0, "init_range", "must be > 0");
    m.finish();
  }

  {
    auto t = s.child("training");
    const bool fed = spec.mode == Mode::federated;
    auto& h = spec.hyper;
    h.learning_rate = t.number("learning_rate", 0.01);
    h.local_epochs = to_int(t, "epochs", fed ? 3 : 25, 0);
    h.batch_size = to_int(t, "batch_size", fed ? 100 : 800, 1);
    h.l2_coef = t.number("l2", 1e-4);
    h.dropout_rate = t.number("dropout", 0.2);
    const auto opt = t.string("optimizer", "sgd");
    if (opt == "sgd") h.optimizer = nn::Optimizer::sgd;
    else if (opt == "adam") h.optimizer = nn::Optimizer::adam;
    else t.fail("optimizer", "expected \"sgd\" or \"adam\"");
    h.adam_beta1 = t.number("adam_beta1", h.adam_beta1);
    h.adam_beta2 = t.number("adam_beta2", h.adam_beta2);
    h.adam_epsilon = t.number("adam_epsilon", h.adam_epsilon);
    t.finish();
    try {
      h.validate();
    } catch (const ConfigError& e) {
      t.fail("", e.what());
    }
  }

  if (spec.mode == Mode::federated) {
    auto f = s.child("federation");
    auto& fs = spec.federation;
    fs.honest = to_int(f, "honest", fs.honest, 0);
    fs.malicious = to_int(f, "malicious", fs.malicious, 0);
    f.check(fs.honest + fs.malicious >= 1, "", "needs at least one client");
    fs.c_h = f.number("c_h", fs.c_h);
    f.check(fs.c_h > 0.0 && fs.c_h <= 1.0, "c_h", "must lie in (0, 1]");
    fs.c_m = f.number("c_m", fs.c_m);
    f.check(fs.c_m > 0.0 && fs.c_m <= 1.0, "c_m", "must lie in (0, 1]");
    fs.rounds = to_int(f, "rounds", fs.rounds, 1);
    const auto dist = f.string("distribution", "iid");
    if (dist == "iid") fs.distribution = data::Distribution::iid;
    else if (dist == "noniid") fs.distribution = data::Distribution::noniid;
    else f.fail("distribution", "expected \"iid\" or \"noniid\"");
    fs.beta = f.number("beta", fs.beta);
    f.check(fs.beta > 0.0, "beta", "must be > 0");
    f.finish();
  } else if (s.has("federation")) {
    s.fail("federation", "only valid for federated experiments");
  }

  {
    auto a = s.child("attack");
    auto& cfg = spec.attack;
    if (a.has("alphas")) {
      const auto& list = a.at("alphas");
      a.check(list.is_array() && !list.empty(), "alphas", "expected a non-empty array of numbers");
      spec.alphas.clear();
      for (std::size_t i = 0; i < list.size(); ++i) {
        const auto& v = list[i];
        a.check(v.is_number(), "alphas/" + std::to_string(i), "expected a number");
        const double alpha = v.get<double>();
        a.check(alpha >= 0.0 && alpha <= 1.0, "alphas/" + std::to_string(i),
                "attack rate " + v.dump() + " outside [0, 1]");
        spec.alphas.push_back(alpha);
      }
    }
    cfg.target_class = a.string("target_class", cfg.target_class);
    try {
      cfg.strategy = attack::parse_strategy(a.string("strategy", "swap"));
    } catch (const ConfigError& e) {
      a.fail("strategy", e.what());
    }
    cfg.start_round = to_int(a, "start_round", cfg.start_round, 1);
    try {
      cfg.knowledge = attack::parse_knowledge(a.string("knowledge", "white_box"));
    } catch (const ConfigError& e) {
      a.fail("knowledge", e.what());
    }
    cfg.clean_label = a.boolean("clean_label", cfg.clean_label);
    cfg.partner_class = a.string("partner_class", "");
    cfg.drop_policy = parse_drop_policy(a);
    cfg.inject_ratio = a.number("inject_ratio", cfg.inject_ratio);
    a.check(cfg.inject_ratio >= 0.0, "inject_ratio", "must be >= 0");
    a.finish();
  }

  spec.repetitions = to_int(s, "repetitions", 1, 1);
  const auto seed = s.integer("seed", 0);
  s.check(seed >= 0, "seed", "must be >= 0");
  spec.seed = static_cast<std::uint64_t>(seed);
  s.finish();
  return spec;
}

const char* mode_name(Mode m) { return m == Mode::federated ? "federated" : "centralized"; }

// ---------------------------------------------------------------------------
// Execution

struct Cell {
  std::size_t spec = 0;
  int repetition = 0;
  std::uint64_t seed = 0;
  std::optional<PreparedData> data;
  std::string error;
};

struct RunOutput {
  metrics::MetricsReport final_metrics;
  std::vector<federation::RoundRecord> rounds;
  federation::Params model;
  std::optional<std::string> partition_json;
  json centralized_audit;
  std::vector<std::string> notes;
};

RunOutput execute(const ExperimentSpec& spec, double alpha, const PreparedData& prepared, std::uint64_t seed) {
  RunOutput out;
  attack::AttackConfig cfg = spec.attack;
  cfg.alpha = alpha;
  if (spec.mode == Mode::centralized) {
    auto run = federation::run_centralized(prepared.train, prepared.test, spec.hyper, cfg, spec.model, seed);
    out.final_metrics = std::move(run.metrics);
    out.model = std::move(run.model);
    out.centralized_audit = attack::to_json(run.audit);
    out.notes = std::move(run.notes);
    return out;
  }
  federation::FederationConfig fc;
  fc.honest = spec.federation.honest;
  fc.malicious = spec.federation.malicious;
  fc.c_h = spec.federation.c_h;
  fc.c_m = spec.federation.c_m;
  fc.rounds = spec.federation.rounds;
  fc.hyper = spec.hyper;
  fc.attack = cfg;
  fc.model = spec.model;
  fc.seed = seed;
  const int clients = fc.honest + fc.malicious;
  const auto partition_seed = derive_seed(seed, {stream::kPartition});
  fc.partition = spec.federation.distribution == data::Distribution::iid
                     ? data::partition_iid(prepared.train, clients, partition_seed)
                     : data::partition_noniid(prepared.train, clients, spec.federation.beta, partition_seed);
  out.partition_json = data::partition_to_json(fc.partition);
  auto run = federation::run_federated(fc, prepared.train, prepared.test);
  out.model = std::move(run.model);
  out.rounds = std::move(run.rounds);
  out.final_metrics = out.rounds.back().test_metrics;
  return out;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

}  // namespace

// ---------------------------------------------------------------------------

json to_json(const ExperimentSpec& spec) {
  json j;
  j["name"] = spec.name;
  j["mode"] = mode_name(spec.mode);
  j["classification"] = spec.classification == Classification::binary ? "binary" : "multiclass";
  json d;
  if (spec.dataset.kind == DatasetSpec::Kind::synthetic) {
    const auto& s = spec.dataset.synthetic;
    d["source"] = "synthetic";
    d["classes"] = s.classes;
    d["features"] = s.features;
    d["train_per_class"] = s.train_per_class;
    d["test_per_class"] = s.test_per_class;
    d["separation"] = s.separation;
  } else {
    const auto& c = spec.dataset.csv;
    d["source"] = "csv";
    d["path"] = c.path.generic_string();
    d["label_column"] = c.label_column;
    d["drop_columns"] = c.drop_columns;
    d["train_fraction"] = c.train_fraction;
    d["stratified"] = c.stratified;
    d["smote"] = c.smote;
    d["smote_k"] = c.smote_k;
  }
  j["dataset"] = std::move(d);
  j["model"] = {{"hidden", spec.model.hidden}, {"init_range", spec.model.init_range}};
  const auto& h = spec.hyper;
  j["training"] = {{"learning_rate", h.learning_rate},
                   {"epochs", h.local_epochs},
                   {"batch_size", h.batch_size},
                   {"l2", h.l2_coef},
                   {"dropout", h.dropout_rate},
                   {"optimizer", h.optimizer == nn::Optimizer::sgd ? "sgd" : "adam"},
                   {"adam_beta1", h.adam_beta1},
                   {"adam_beta2", h.adam_beta2},
                   {"adam_epsilon", h.adam_epsilon}};
  if (spec.mode == Mode::federated) {
    const auto& f = spec.federation;
    j["federation"] = {{"honest", f.honest},
                       {"malicious", f.malicious},
                       {"c_h", f.c_h},
                       {"c_m", f.c_m},
                       {"rounds", f.rounds},
                       {"distribution", f.distribution == data::Distribution::iid ? "iid" : "noniid"},
                       {"beta", f.beta}};
  }
  const auto& a = spec.attack;
  json drop = a.drop_policy.kind == attack::DropPolicy::Kind::none ? json("none")
                                                                    : json{{"top_ranked", a.drop_policy.count}};
  j["attack"] = {{"alphas", spec.alphas},
                 {"target_class", a.target_class},
                 {"strategy", attack::to_string(a.strategy)},
                 {"start_round", a.start_round},
                 {"knowledge", attack::to_string(a.knowledge)},
                 {"clean_label", a.clean_label},
                 {"partner_class", a.partner_class},
                 {"drop_policy", std::move(drop)},
                 {"inject_ratio", a.inject_ratio}};
  j["repetitions"] = spec.repetitions;
  j["seed"] = spec.seed;
  return j;
}

ConfigFile parse_config_text(const std::string& text, const std::string& source) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": " + e.what());
  }
  Section top(root, "", source);
  ConfigFile cfg;
  cfg.output_dir = top.string("output_dir", "results");
  const auto& list = top.at("experiments");
  top.check(list.is_array() && !list.empty(), "experiments", "expected a non-empty array");
  std::set<std::string> names;
  for (std::size_t i = 0; i < list.size(); ++i) {
    auto spec = parse_experiment(Section(list[i], "/experiments/" + std::to_string(i), source));
    if (!names.insert(spec.name).second)
      throw ConfigError(source + ": /experiments/" + std::to_string(i) + "/name: duplicate experiment name '" +
                        spec.name + "'");
    cfg.experiments.push_back(std::move(spec));
  }
  top.finish();
  return cfg;
}

ConfigFile parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  auto cfg = parse_config_text(buffer.str(), path.string());
  // Relative CSV paths resolve against the config file's directory.
  for (auto& spec : cfg.experiments)
    if (spec.dataset.kind == DatasetSpec::Kind::csv && spec.dataset.csv.path.is_relative())
      spec.dataset.csv.path = path.parent_path() / spec.dataset.csv.path;
  return cfg;
}

PreparedData prepare_data(const ExperimentSpec& spec, std::uint64_t seed) {
  PreparedData out;
  if (spec.dataset.kind == DatasetSpec::Kind::synthetic) {
    const auto& s = spec.dataset.synthetic;
    const int per_class = s.train_per_class + s.test_per_class;
    auto ds = data::generate_synthetic(s.classes, s.features, per_class, s.separation, seed);
    const double fraction = static_cast<double>(s.train_per_class) / per_class;
    auto split = data::split_train_test(ds, fraction, seed, true);
    auto standardized = data::standardize(split.train, split.test);
    out.train = std::move(standardized.train);
    out.test = std::move(standardized.test);
    out.log.push_back("synthetic: " + std::to_string(ds.size()) + " rows, " + std::to_string(s.classes) + " classes");
    out.log.push_back("split: " + std::to_string(out.train.size()) + " train / " + std::to_string(out.test.size()) +
                      " test (stratified)");
    out.log.push_back("standardize: scaler fitted on train");
  } else {
    const auto& c = spec.dataset.csv;
    const auto raw = data::load_csv(c.path, c.label_column);
    data::PreprocessOptions opts;
    opts.drop_columns = c.drop_columns;
    opts.train_fraction = c.train_fraction;
    opts.stratified = c.stratified;
    opts.seed = seed;
    auto pre = data::preprocess(raw, opts);
    out.train = std::move(pre.train);
    out.test = std::move(pre.test);
    out.log = std::move(pre.log);
    out.warnings = std::move(pre.warnings);
  }
  if (spec.classification == Classification::binary) {
    out.train = data::collapse_to_binary(out.train, spec.attack.target_class);
    out.test = data::collapse_to_binary(out.test, spec.attack.target_class);
    out.log.push_back("binary: every class except '" + spec.attack.target_class + "' relabeled Attack");
  }
  if (spec.dataset.kind == DatasetSpec::Kind::csv && spec.dataset.csv.smote) {
    const auto before = out.train.size();
    out.train = data::smote_oversample(out.train, spec.dataset.csv.smote_k, seed).data;
    out.log.push_back("smote: " + std::to_string(before) + " -> " + std::to_string(out.train.size()) + " train rows");
  }
  return out;
}

std::string run_id(const std::string& name, double alpha, int repetition) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "_a%04lld_r%d", static_cast<long long>(std::llround(alpha * 1000.0)), repetition);
  return name + buf;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << contents;
    if (!out) throw Error("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

std::vector<RunReport> run_matrix(const std::vector<ExperimentSpec>& specs, const RunOptions& options) {
  // One cell per (spec, repetition); all alphas of a cell share its prepared data.
  std::vector<Cell> cells;
  for (std::size_t s = 0; s < specs.size(); ++s)
    for (int r = 0; r < specs[s].repetitions; ++r)
      cells.push_back({s, r, specs[s].seed + static_cast<std::uint64_t>(r), std::nullopt, {}});

  federation::parallel_for(cells.size(), options.jobs, [&](std::size_t i) {
    try {
      cells[i].data = prepare_data(specs[cells[i].spec], cells[i].seed);
    } catch (const std::exception& e) {
      cells[i].error = e.what();
    }
  });

  struct Job {
    std::size_t cell;
    double alpha;
    std::size_t baseline;  // index of the alpha = 0 job of this cell
  };
  std::vector<Job> jobs;
  std::vector<std::size_t> baseline_jobs;
  std::vector<std::size_t> attack_jobs;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const auto& spec = specs[cells[c].spec];
    const std::size_t base = jobs.size();
    jobs.push_back({c, 0.0, base});
    baseline_jobs.push_back(base);
    std::set<double> seen{0.0};
    for (double a : spec.alphas)
      if (seen.insert(a).second) {
        attack_jobs.push_back(jobs.size());
        jobs.push_back({c, a, base});
      }
  }

  std::vector<RunReport> reports(jobs.size());
  std::vector<std::optional<metrics::MetricsReport>> finals(jobs.size());

  auto run_job = [&](std::size_t j) {
    const auto& job = jobs[j];
    const auto& cell = cells[job.cell];
    const auto& spec = specs[cell.spec];
    auto& report = reports[j];
    report.run_id = run_id(spec.name, job.alpha, cell.repetition);
    const auto started = std::chrono::steady_clock::now();

    json doc;
    doc["kind"] = "run_report";
    doc["run_id"] = report.run_id;
    doc["experiment"] = spec.name;
    doc["mode"] = mode_name(spec.mode);
    doc["alpha"] = job.alpha;
    doc["repetition"] = cell.repetition;
    doc["seed"] = cell.seed;
    doc["baseline_run"] = job.alpha == 0.0 ? json(nullptr) : json(reports[job.baseline].run_id);
    doc["spec"] = to_json(spec);

    try {
      if (!cell.data) throw Error("data preparation failed: " + cell.error);
      if (job.alpha != 0.0 && !finals[job.baseline])
        throw Error("baseline run " + reports[job.baseline].run_id + " failed");
      const auto& prepared = *cell.data;
      auto out = execute(spec, job.alpha, prepared, cell.seed);
      const auto& names = prepared.train.class_names;
      if (job.alpha != 0.0) out.final_metrics.poisoning_attack_rate = metrics::attack_rates(out.final_metrics, *finals[job.baseline]);

      doc["data"] = {{"train_rows", prepared.train.size()},
                     {"test_rows", prepared.test.size()},
                     {"features", prepared.train.features.cols()},
                     {"classes", names},
                     {"log", prepared.log},
                     {"warnings", prepared.warnings}};
      json rounds = json::array();
      std::string round_log;
      for (const auto& rec : out.rounds) {
        auto r = federation::to_json(rec, names);
        round_log += r.dump() + "\n";
        rounds.push_back(std::move(r));
      }
      if (spec.mode == Mode::federated) doc["rounds"] = std::move(rounds);
      else doc["attack_audit"] = out.centralized_audit;
      if (!out.notes.empty()) doc["notes"] = out.notes;
      doc["final_metrics"] = metrics::to_json(out.final_metrics, names);
      const int target = prepared.train.class_id(spec.attack.target_class);
      if (out.final_metrics.poisoning_attack_rate && target >= 0) {
        const auto& rate = (*out.final_metrics.poisoning_attack_rate)[static_cast<std::size_t>(target)];
        doc["target_attack_rate"] = rate ? json(*rate) : json("N/A");
      }
      doc["status"] = "ok";

      const auto& dir = options.output_dir;
      if (!round_log.empty()) write_file_atomic(dir / "rounds" / (report.run_id + ".jsonl"), round_log);
      write_file_atomic(dir / "models" / (report.run_id + ".json"), dump(federation::model_to_json(out.model)));
      write_file_atomic(dir / "confusion" / (report.run_id + ".csv"),
                        metrics::confusion_to_csv(out.final_metrics.confusion, names));
      if (out.partition_json) write_file_atomic(dir / "partitions" / (report.run_id + ".json"), *out.partition_json + "\n");
      finals[j] = std::move(out.final_metrics);
      report.ok = true;
    } catch (const std::exception& e) {
      doc["status"] = "failed";
      doc["error"] = e.what();
      report.ok = false;
      report.error = e.what();
    }
    const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - started;
    doc["wall_clock_seconds"] = elapsed.count();
    report.json = std::move(doc);
    write_file_atomic(options.output_dir / (report.run_id + ".json"), dump(report.json));
  };

  federation::parallel_for(baseline_jobs.size(), options.jobs, [&](std::size_t i) { run_job(baseline_jobs[i]); });
  federation::parallel_for(attack_jobs.size(), options.jobs, [&](std::size_t i) { run_job(attack_jobs[i]); });

  std::vector<json> docs;
  for (const auto& r : reports) docs.push_back(r.json);
  emit_plotdata(docs, options.output_dir / "plot");
  return reports;
}

std::vector<std::string> emit_plotdata(const std::vector<json>& reports, const std::filesystem::path& dir) {
  std::vector<std::string> notices;
  if (reports.empty()) return notices;
  bool any_rates = false;
  char buf[64];
  for (const auto& r : reports) {
    if (!r.contains("run_id") || r.value("status", "") != "ok") continue;
    const auto id = r.at("run_id").get<std::string>();
    if (r.contains("rounds") && !r.at("rounds").empty()) {
      std::string csv = "round,accuracy\n";
      for (const auto& rec : r.at("rounds")) {
        std::snprintf(buf, sizeof buf, "%d,%.6f\n", rec.at("round").get<int>(),
                      rec.at("test_metrics").at("accuracy").get<double>());
        csv += buf;
      }
      write_file_atomic(dir / (id + "_accuracy.csv"), csv);
    }
    const auto& per_class = r.at("final_metrics").at("per_class");
    if (per_class.empty() || !per_class.front().contains("poisoning_attack_rate")) continue;
    any_rates = true;
    std::string csv = "class,attack_rate_percent\n";
    for (const auto& c : per_class) {
      const auto& rate = c.at("poisoning_attack_rate");
      if (rate.is_number()) std::snprintf(buf, sizeof buf, "%.4f", 100.0 * rate.get<double>());
      else std::snprintf(buf, sizeof buf, "N/A");
      csv += c.at("class").get<std::string>() + "," + buf + "\n";
    }
    write_file_atomic(dir / (id + "_attack_rate.csv"), csv);
  }
  if (!any_rates) notices.push_back("no attacked runs with a baseline; attack-rate files omitted");
  return notices;
}

std::vector<json> load_reports(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("'" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<json> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    json j = json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.is_object() && j.value("kind", "") == "run_report") out.push_back(std::move(j));
  }
  return out;
}

}  // namespace fedpoison::experiment
