#include "doctest.h"
#include "oracles.hpp"

#include <random>

#include "fedpoison/data.hpp"
#include "fedpoison/errors.hpp"
#include "fedpoison/federation.hpp"

using namespace fedpoison;
using namespace fedpoison::federation;
using Mat = nn::Matrix<double>;

namespace {

struct Synthetic {
  data::LabeledDataset train;
  data::LabeledDataset test;
};

Synthetic synthetic(std::uint64_t seed, double separation = 6.0) {
  const auto ds = data::generate_synthetic(4, 8, 300, separation, seed);
  const auto split = data::split_train_test(ds, 250.0 / 300.0, seed, true);
  auto st = data::standardize(split.train, split.test);
  return {std::move(st.train), std::move(st.test)};
}

TrainingHyperparams fast_hyper() {
  TrainingHyperparams h;
  h.learning_rate = 0.1;
  h.local_epochs = 3;
  h.batch_size = 10;
  h.l2_coef = 1e-4;
  h.dropout_rate = 0.2;
  return h;
}

FederationConfig make_config(const data::LabeledDataset& train, int honest, int malicious, std::uint64_t seed) {
  FederationConfig c;
  c.honest = honest;
  c.malicious = malicious;
  c.rounds = 10;
  c.hyper = fast_hyper();
  c.seed = seed;
  c.partition = data::partition_iid(train, honest + malicious, seed);
  return c;
}

Params shaped(std::uint64_t seed, std::vector<nn::Index> dims) {
  return nn::init_model<double>(std::span<const nn::Index>(dims), 1.0, seed);
}

Params scalar_model(double v) {
  Params p = shaped(0, {1, 1});
  p.layers[0].weights(0, 0) = v;
  p.layers[0].bias(0) = v;
  return p;
}

}  // namespace

TEST_CASE("aggregate small cases") {
  const std::vector<WeightedModel<double>> one{{scalar_model(2.0), 7}};
  CHECK(aggregate(one) == one[0].params);

  const std::vector<WeightedModel<double>> even{{scalar_model(2.0), 1}, {scalar_model(4.0), 1}};
  CHECK(aggregate(even).layers[0].weights(0, 0) == 3.0);

  const std::vector<WeightedModel<double>> skew{{scalar_model(2.0), 3}, {scalar_model(4.0), 1}};
  CHECK(aggregate(skew).layers[0].weights(0, 0) == 2.5);

  CHECK_THROWS_AS(aggregate(std::vector<WeightedModel<double>>{}), ShapeError);
  const std::vector<WeightedModel<double>> zero{{scalar_model(2.0), 0}, {scalar_model(4.0), 0}};
  CHECK_THROWS_AS(aggregate(zero), DataError);
  const std::vector<WeightedModel<double>> mismatch{{scalar_model(2.0), 1}, {shaped(1, {2, 1}), 1}};
  CHECK_THROWS_AS(aggregate(mismatch), ShapeError);
}

TEST_CASE("aggregate matches a brute-force weighted mean") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_int_distribution<int> width(1, 12), clients(1, 8);
    std::uniform_int_distribution<std::size_t> count(1, 500);
    const std::vector<nn::Index> dims{width(rng), width(rng), width(rng)};
    std::vector<WeightedModel<double>> updates;
    std::vector<std::vector<double>> flats;
    std::vector<std::size_t> counts;
    const int k = clients(rng);
    for (int i = 0; i < k; ++i) {
      updates.push_back({shaped(rng(), dims), count(rng)});
      flats.push_back(nn::flatten(updates.back().params));
      counts.push_back(updates.back().samples);
    }
    const auto got = nn::flatten(aggregate(updates));
    const auto want = oracle::weighted_mean(flats, counts);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) <= 1e-12);

    // Identical inputs and uniformly scaled counts.
    std::vector<WeightedModel<double>> same(3, updates.front());
    CHECK(aggregate(same) == updates.front().params);
    auto scaled = updates;
    for (auto& u : scaled) u.samples *= 7;
    CHECK(aggregate(scaled) == aggregate(updates));
  }
}

TEST_CASE("subset sizes and selection") {
  CHECK(subset_size(100, 0.1) == 10);
  CHECK(subset_size(100, 0.001) == 1);
  CHECK(subset_size(100, 1.0) == 100);
  CHECK(subset_size(100, 0.29) == 29);

  std::vector<int> ids(100);
  std::iota(ids.begin(), ids.end(), 0);
  CHECK(select_subset(ids, 0.1, 4, 1).size() == 10);
  CHECK(select_subset(ids, 0.1, 4, 1) == select_subset(ids, 0.1, 4, 1));
  CHECK(select_subset(ids, 0.1, 4, 1) != select_subset(ids, 0.1, 4, 2));
  CHECK(select_subset(ids, 1.0, 4, 3).size() == 100);
  CHECK_THROWS_AS(select_subset(ids, 0.0, 4, 1), ConfigError);
}

TEST_CASE("honest update edge cases") {
  const auto data = synthetic(3);
  const auto global = nn::init_model<double>({8, 16, 4}, 0.05, 9);
  auto h = fast_hyper();

  h.local_epochs = 0;
  CHECK(client_update_honest(global, data.train, h, 1).params == global);
  h.local_epochs = 2;
  h.learning_rate = 0.0;
  CHECK(client_update_honest(global, data.train, h, 1).params == global);

  // One epoch with a single full batch is a single SGD step.
  h = fast_hyper();
  h.local_epochs = 1;
  h.batch_size = static_cast<int>(data.train.size());
  h.dropout_rate = 0.0;
  const auto r = client_update_honest(global, data.train, h, 5);
  nn::Batch<double> all{data.train.features, data.train.labels};
  const auto g = nn::backward(global, all, h, 0);
  Params manual = global;
  for (std::size_t l = 0; l < manual.layers.size(); ++l) {
    manual.layers[l].weights -= h.learning_rate * g.layers[l].weights;
    manual.layers[l].bias -= h.learning_rate * g.layers[l].bias;
  }
  const auto a = nn::flatten(r.params);
  const auto b = nn::flatten(manual);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  CHECK(r.samples == data.train.size());
}

TEST_CASE("malicious update falls back to honest behaviour") {
  const auto data = synthetic(4);
  const auto global = nn::init_model<double>({8, 16, 4}, 0.05, 2);
  const auto h = fast_hyper();
  const auto honest = client_update_honest(global, data.train, h, 11, 6);

  attack::AttackConfig inert;
  RoundContext ctx;
  ctx.round = 3;
  ctx.first_epoch = 6;
  ctx.honest_selection = {0, 1};
  const auto a = client_update_malicious(global, data.train, h, inert, ctx, 11);
  CHECK(a.update.params == honest.params);
  CHECK(a.selection == ctx.honest_selection);
  CHECK_FALSE(a.attacked);

  attack::AttackConfig later;
  later.alpha = 0.6;
  later.start_round = 5;
  const auto b = client_update_malicious(global, data.train, h, later, ctx, 11);
  CHECK(b.update.params == honest.params);
}

TEST_CASE("malicious update hurts the target class") {
  const auto data = synthetic(5);
  const auto global = nn::init_model<double>({8, 32, 4}, 0.05, 2);
  auto h = fast_hyper();
  h.local_epochs = 10;
  const auto honest = client_update_honest(global, data.train, h, 3);
  attack::AttackConfig cfg;
  cfg.alpha = 0.6;
  RoundContext ctx;
  const auto bad = client_update_malicious(global, data.train, h, cfg, ctx, 3);
  CHECK(bad.attacked);
  CHECK(bad.update.samples > data.train.size());
  const int normal = data.test.class_id("Normal");
  const auto clean = evaluate(honest.params, data.test);
  const auto poisoned = evaluate(bad.update.params, data.test);
  CHECK(poisoned.recall[static_cast<std::size_t>(normal)] < clean.recall[static_cast<std::size_t>(normal)]);
}

TEST_CASE("single honest client reproduces centralized training bit for bit") {
  const auto data = synthetic(6);
  auto cfg = make_config(data.train, 1, 0, 21);
  cfg.rounds = 4;
  const auto fed = run_federated(cfg, data.train, data.test);

  auto central_hyper = cfg.hyper;
  central_hyper.local_epochs = cfg.rounds * cfg.hyper.local_epochs;
  const auto local = data.train.select(cfg.partition.client_indices[0]);
  const auto central = run_centralized(local, data.test, central_hyper, {}, cfg.model, cfg.seed);
  CHECK(fed.model == central.model);
}

TEST_CASE("inert malicious clients are indistinguishable from honest ones") {
  const auto data = synthetic(7);
  const auto honest = run_federated(make_config(data.train, 10, 0, 5), data.train, data.test);
  const auto mixed = run_federated(make_config(data.train, 3, 7, 5), data.train, data.test);
  CHECK(honest.model == mixed.model);
}

TEST_CASE("attack is inert before its start round") {
  const auto data = synthetic(8);
  auto clean = make_config(data.train, 3, 7, 5);
  clean.rounds = 4;
  auto late = clean;
  late.attack.alpha = 0.6;
  late.attack.start_round = 5;
  CHECK(run_federated(clean, data.train, data.test).model == run_federated(late, data.train, data.test).model);
  late.rounds = 5;
  clean.rounds = 5;
  CHECK_FALSE(run_federated(clean, data.train, data.test).model == run_federated(late, data.train, data.test).model);
}

TEST_CASE("runs are deterministic regardless of thread count") {
  const auto data = synthetic(9);
  auto cfg = make_config(data.train, 4, 4, 13);
  cfg.c_h = 0.5;
  cfg.c_m = 0.5;
  cfg.attack.alpha = 0.5;
  cfg.attack.drop_policy = attack::DropPolicy::top_ranked(1);
  cfg.rounds = 5;
  const auto serial = run_federated(cfg, data.train, data.test);
  cfg.jobs = 3;
  const auto threaded = run_federated(cfg, data.train, data.test);
  CHECK(serial.model == threaded.model);
  REQUIRE(serial.rounds.size() == threaded.rounds.size());
  bool any_drop = false;
  for (std::size_t r = 0; r < serial.rounds.size(); ++r) {
    const auto& a = serial.rounds[r];
    const auto& b = threaded.rounds[r];
    CHECK(a.honest_selected == b.honest_selected);
    CHECK(a.dropped == b.dropped);
    CHECK(a.test_metrics.confusion == b.test_metrics.confusion);
    CHECK(a.honest_selected.size() == 2);
    CHECK(a.malicious_selected.size() == 2);
    for (int d : a.dropped) CHECK(d < cfg.honest);
    any_drop |= !a.dropped.empty();
  }
  CHECK(any_drop);
  // The first round has no loss history, so nothing can be ranked yet.
  CHECK(serial.rounds[0].dropped.empty());
}

TEST_CASE("black-box attackers rank only what they can observe") {
  const auto data = synthetic(10);
  auto cfg = make_config(data.train, 4, 4, 13);
  cfg.attack.alpha = 0.5;
  cfg.attack.knowledge = attack::Knowledge::black_box;
  cfg.attack.drop_policy = attack::DropPolicy::top_ranked(2);
  cfg.rounds = 4;
  for (const auto& rec : run_federated(cfg, data.train, data.test).rounds) CHECK(rec.dropped.empty());
}

TEST_CASE("honest federation improves over rounds and the attack hurts it") {
  const auto data = synthetic(11);
  const auto honest = run_federated(make_config(data.train, 10, 0, 3), data.train, data.test);
  int non_decreasing = 0;
  for (std::size_t r = 1; r < honest.rounds.size(); ++r)
    non_decreasing += honest.rounds[r].test_metrics.accuracy >= honest.rounds[r - 1].test_metrics.accuracy;
  CHECK(non_decreasing >= 8);

  auto cfg = make_config(data.train, 3, 7, 3);
  cfg.attack.alpha = 0.6;
  const auto attacked = run_federated(cfg, data.train, data.test);
  CHECK(attacked.rounds.back().test_metrics.accuracy < honest.rounds.back().test_metrics.accuracy);
  for (const auto& rec : attacked.rounds) CHECK(rec.audits.size() == 7);
}

TEST_CASE("centralized training with and without poisoning") {
  const auto data = synthetic(12);
  auto h = fast_hyper();
  h.local_epochs = 25;
  h.batch_size = 50;
  ModelSpec model;
  const auto clean = run_centralized(data.train, data.test, h, {}, model, 4);
  CHECK(clean.metrics.accuracy >= 0.95);

  const int normal = data.test.class_id("Normal");
  attack::AttackConfig cfg;
  cfg.alpha = 0.6;
  const auto a6 = run_centralized(data.train, data.test, h, cfg, model, 4);
  cfg.alpha = 0.8;
  const auto a8 = run_centralized(data.train, data.test, h, cfg, model, 4);
  const auto n = static_cast<std::size_t>(normal);
  CHECK(a6.metrics.recall[n] <= 0.1);
  CHECK(a8.metrics.recall[n] <= a6.metrics.recall[n]);
  // Damage is targeted: the untouched classes keep their recall.
  for (std::size_t c = 0; c < 4; ++c)
    if (c != n && c != static_cast<std::size_t>(attack::partner_class(data.train, cfg, normal)))
      CHECK(a6.metrics.recall[c] >= 0.9);
}

TEST_CASE("round records serialize") {
  const auto data = synthetic(13);
  auto cfg = make_config(data.train, 2, 1, 1);
  cfg.rounds = 1;
  cfg.attack.alpha = 0.5;
  const auto run = run_federated(cfg, data.train, data.test);
  const auto j = to_json(run.rounds[0], data.train.class_names);
  CHECK(j["round"] == 1);
  CHECK(j["participants"].size() == 3);
  CHECK(j["attack_audit"].size() == 1);
  const auto m = model_to_json(run.model);
  CHECK(m["layer_dims"] == nlohmann::ordered_json::array({8, 32, 4}));
}

TEST_CASE("parallel_for covers every index and rethrows") {
  std::vector<int> hits(50, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  for (int h : hits) CHECK(h == 1);
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) { if (i == 7) throw DataError("boom"); }), DataError);
}
