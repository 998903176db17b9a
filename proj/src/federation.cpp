#include "fedpoison/federation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "fedpoison/rng.hpp"

namespace fedpoison::federation {

std::vector<nn::Index> ModelSpec::layer_dims(nn::Index inputs, nn::Index classes) const {
  std::vector<nn::Index> dims{inputs};
  for (int h : hidden) dims.push_back(h);
  dims.push_back(classes);
  return dims;
}

void FederationConfig::validate() const {
  if (honest < 0 || malicious < 0) throw ConfigError("client counts must be non-negative");
  if (honest + malicious < 1) throw ConfigError("federation needs at least one client");
  if (!(c_h > 0.0 && c_h <= 1.0) || !(c_m > 0.0 && c_m <= 1.0))
    throw ConfigError("participation fractions must lie in (0, 1]");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (partition.client_count() != static_cast<std::size_t>(honest + malicious))
    throw ConfigError("partition has " + std::to_string(partition.client_count()) + " clients, roster has " +
                      std::to_string(honest + malicious));
  hyper.validate();
  attack.validate();
}

std::vector<int> FederationConfig::honest_ids() const {
  std::vector<int> ids(static_cast<std::size_t>(honest));
  std::iota(ids.begin(), ids.end(), 0);
  return ids;
}

std::vector<int> FederationConfig::malicious_ids() const {
  std::vector<int> ids(static_cast<std::size_t>(malicious));
  std::iota(ids.begin(), ids.end(), honest);
  return ids;
}

// ---------------------------------------------------------------------------

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(jobs, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::size_t error_index = count;
  std::exception_ptr error;
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (i < error_index) {
              error_index = i;
              error = std::current_exception();
            }
          }
        }
      });
  }
  if (error) std::rethrow_exception(error);
}

std::size_t subset_size(std::size_t count, double fraction) {
  const auto scaled = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 1e-9));
  return std::max<std::size_t>(std::min(scaled, count), 1);
}

std::set<int> select_subset(std::span<const int> ids, double fraction, std::uint64_t seed, int round) {
  if (ids.empty()) throw ConfigError("cannot select from an empty client list");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("participation fraction must lie in (0, 1]");
  std::vector<int> pool(ids.begin(), ids.end());
  Rng rng = make_rng(seed, {static_cast<std::uint64_t>(round)});
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(subset_size(ids.size(), fraction));
  return {pool.begin(), pool.end()};
}

std::uint64_t client_stream_seed(std::uint64_t seed, int client_id) {
  return derive_seed(seed, {stream::kTrain, static_cast<std::uint64_t>(client_id)});
}

TrainOutcome train_epochs(const Params& start, const LabeledDataset& local, const TrainingHyperparams& hyper,
                          int epochs, std::uint64_t stream_seed, std::int64_t first_epoch) {
  if (local.size() == 0) throw DataError("cannot train on an empty local dataset");
  TrainOutcome out{start, 0};
  nn::OptimizerState<double> state;
  const std::size_t n = local.size();
  const auto batch = static_cast<std::size_t>(hyper.batch_size);
  std::vector<std::size_t> order(n);
  for (int e = 0; e < epochs; ++e) {
    const auto epoch_id = static_cast<std::uint64_t>(first_epoch + e);
    std::iota(order.begin(), order.end(), 0);
    Rng rng = make_rng(stream_seed, {stream::kShuffle, epoch_id});
    std::shuffle(order.begin(), order.end(), rng);
    std::uint64_t b = 0;
    for (std::size_t pos = 0; pos < n; pos += batch, ++b) {
      const std::span<const std::size_t> rows(order.data() + pos, std::min(batch, n - pos));
      auto subset = local.select(rows);
      nn::Batch<double> mb{std::move(subset.features), std::move(subset.labels)};
      const auto grad = nn::backward(out.params, mb, hyper, derive_seed(stream_seed, {stream::kDropout, epoch_id, b}));
      out.params = nn::apply_update(out.params, grad, hyper, ++out.steps, state);
    }
  }
  return out;
}

double evaluate_loss(const Params& params, const LabeledDataset& ds, double l2_coef) {
  return nn::loss(nn::forward(params, ds.features), ds.labels, params, l2_coef);
}

metrics::MetricsReport evaluate(const Params& params, const LabeledDataset& ds) {
  const auto preds = nn::predict(params, ds.features);
  return metrics::summarize(metrics::confusion(preds, ds.labels, ds.n_classes()));
}

ClientResult client_update_honest(const Params& global, const LabeledDataset& local, const TrainingHyperparams& hyper,
                                  std::uint64_t seed, std::int64_t first_epoch) {
  auto trained = train_epochs(global, local, hyper, hyper.local_epochs, seed, first_epoch);
  ClientResult r;
  r.loss = evaluate_loss(trained.params, local, hyper.l2_coef);
  r.params = std::move(trained.params);
  r.samples = local.size();
  return r;
}

LabeledDataset poison_local(const LabeledDataset& local, const attack::AttackConfig& cfg, std::uint64_t seed,
                            attack::AttackAudit& audit, std::vector<std::string>& notes) {
  audit.rows_before = audit.rows_after = local.size();
  if (cfg.alpha == 0.0) return local;
  const int target = local.class_id(cfg.target_class);
  if (target < 0) throw AttackError("target class '" + cfg.target_class + "' is not in the class table");
  const std::size_t n_target = local.class_counts()[static_cast<std::size_t>(target)];
  if (n_target == 0) {
    notes.push_back("no local rows of the target class; nothing to poison");
    return local;
  }
  LabeledDataset poisoned = attack::flip_labels(local, cfg, seed, &audit);
  const auto inject = static_cast<std::size_t>(std::llround(cfg.inject_ratio * cfg.alpha * static_cast<double>(n_target)));
  if (inject > 0) {
    if (n_target < 2) {
      notes.push_back("fewer than 2 local target rows; injection skipped");
    } else {
      try {
        const auto with_poison = attack::generate_poison_samples(local, cfg, inject, seed);
        std::vector<std::size_t> tail(inject);
        std::iota(tail.begin(), tail.end(), local.size());
        poisoned = data::concat(poisoned, with_poison.select(tail));
        audit.injected = inject;
      } catch (const AttackError& e) {
        notes.push_back(std::string("injection skipped: ") + e.what());
      }
    }
  }
  audit.rows_after = poisoned.size();
  return poisoned;
}

MaliciousResult client_update_malicious(const Params& global, const LabeledDataset& local,
                                        const TrainingHyperparams& hyper, const attack::AttackConfig& cfg,
                                        const RoundContext& ctx, std::uint64_t seed) {
  MaliciousResult r;
  r.selection = ctx.honest_selection;
  if (ctx.round < cfg.start_round || cfg.inert()) {
    r.update = client_update_honest(global, local, hyper, seed, ctx.first_epoch);
    r.audit.rows_before = r.audit.rows_after = local.size();
    return r;
  }
  r.attacked = true;

  if (cfg.drop_policy.active()) {
    attack::LossHistory visible;
    if (ctx.history) {
      for (const auto& [id, losses] : *ctx.history)
        if (cfg.knowledge == attack::Knowledge::white_box || ctx.malicious_ids.contains(id)) visible[id] = losses;
    }
    try {
      const auto ranking = attack::identify_clients(visible);
      r.selection = attack::drop_clients(ctx.honest_selection, ranking, cfg.drop_policy, ctx.malicious_ids);
    } catch (const RankingError&) {
      r.notes.push_back("client ranking skipped: insufficient loss history");
    }
  }

  const auto attack_seed = derive_seed(seed, {stream::kAttack, static_cast<std::uint64_t>(ctx.round)});
  const LabeledDataset poisoned = poison_local(local, cfg, attack_seed, r.audit, r.notes);
  r.update = client_update_honest(global, poisoned, hyper, seed, ctx.first_epoch);
  return r;
}

// ---------------------------------------------------------------------------

FederatedRun run_federated(const FederationConfig& config, const LabeledDataset& train, const LabeledDataset& test) {
  config.validate();
  train.validate();
  test.validate();
  config.partition.validate(train.size());
  if (test.class_names != train.class_names) throw DataError("train and test class tables differ");

  const auto dims = config.model.layer_dims(train.features.cols(), train.n_classes());
  FederatedRun run;
  run.model = nn::init_model<double>(std::span<const nn::Index>(dims), config.model.init_range, config.seed);

  const std::size_t n_clients = config.partition.client_count();
  std::vector<LabeledDataset> locals;
  locals.reserve(n_clients);
  for (const auto& rows : config.partition.client_indices) locals.push_back(train.select(rows));

  const auto honest_ids = config.honest_ids();
  const auto malicious_ids = config.malicious_ids();
  const std::set<int> malicious_set(malicious_ids.begin(), malicious_ids.end());
  // Attackers collude on one partner class: the majority non-target class of their pooled data.
  attack::AttackConfig attack_cfg = config.attack;
  if (attack_cfg.partner_class.empty() && !malicious_ids.empty() && attack_cfg.alpha > 0.0) {
    const int target = train.class_id(attack_cfg.target_class);
    if (target < 0) throw AttackError("target class '" + attack_cfg.target_class + "' is not in the class table");
    std::vector<std::size_t> pooled;
    for (int id : malicious_ids) {
      const auto& rows = config.partition.client_indices[static_cast<std::size_t>(id)];
      pooled.insert(pooled.end(), rows.begin(), rows.end());
    }
    const int partner = attack::majority_non_target(train.select(pooled), target);
    if (partner >= 0) attack_cfg.partner_class = train.class_names[static_cast<std::size_t>(partner)];
  }
  const bool track_history = config.malicious > 0 && config.attack.drop_policy.active();
  const auto honest_seed = derive_seed(config.seed, {stream::kSelectHonest});
  const auto malicious_seed = derive_seed(config.seed, {stream::kSelectMalicious});
  attack::LossHistory history;

  for (int round = 1; round <= config.rounds; ++round) {
    RoundRecord rec;
    rec.round = round;
    const std::int64_t first_epoch = static_cast<std::int64_t>(round - 1) * config.hyper.local_epochs;

    if (track_history) {
      std::vector<double> losses(n_clients);
      parallel_for(n_clients, config.jobs,
                   [&](std::size_t k) { losses[k] = evaluate_loss(run.model, locals[k], config.hyper.l2_coef); });
      for (std::size_t k = 0; k < n_clients; ++k) history[static_cast<int>(k)].push_back(losses[k]);
    }

    if (!honest_ids.empty()) rec.honest_selected = select_subset(honest_ids, config.c_h, honest_seed, round);
    if (!malicious_ids.empty())
      rec.malicious_selected = select_subset(malicious_ids, config.c_m, malicious_seed, round);

    const std::vector<int> attackers(rec.malicious_selected.begin(), rec.malicious_selected.end());
    std::vector<MaliciousResult> bad(attackers.size());
    parallel_for(attackers.size(), config.jobs, [&](std::size_t i) {
      RoundContext ctx;
      ctx.round = round;
      ctx.self_id = attackers[i];
      ctx.first_epoch = first_epoch;
      ctx.history = &history;
      ctx.honest_selection = rec.honest_selected;
      ctx.malicious_ids = malicious_set;
      const auto id = static_cast<std::size_t>(attackers[i]);
      bad[i] = client_update_malicious(run.model, locals[id], config.hyper, attack_cfg, ctx,
                                       client_stream_seed(config.seed, attackers[i]));
    });

    std::set<int> surviving = rec.honest_selected;
    for (const auto& b : bad) {
      std::set<int> kept;
      std::set_intersection(surviving.begin(), surviving.end(), b.selection.begin(), b.selection.end(),
                            std::inserter(kept, kept.end()));
      surviving = std::move(kept);
    }
    std::set_difference(rec.honest_selected.begin(), rec.honest_selected.end(), surviving.begin(), surviving.end(),
                        std::inserter(rec.dropped, rec.dropped.end()));

    const std::vector<int> honest_round(surviving.begin(), surviving.end());
    std::vector<ClientResult> good(honest_round.size());
    parallel_for(honest_round.size(), config.jobs, [&](std::size_t i) {
      const auto id = static_cast<std::size_t>(honest_round[i]);
      good[i] = client_update_honest(run.model, locals[id], config.hyper, client_stream_seed(config.seed, honest_round[i]),
                                     first_epoch);
    });

    // Honest ids precede malicious ids, so this is client-id order.
    std::vector<WeightedModel<double>> updates;
    for (std::size_t i = 0; i < good.size(); ++i) {
      rec.participants.push_back({honest_round[i], false, good[i].samples, good[i].loss});
      updates.push_back({std::move(good[i].params), good[i].samples});
    }
    for (std::size_t i = 0; i < bad.size(); ++i) {
      rec.participants.push_back({attackers[i], true, bad[i].update.samples, bad[i].update.loss});
      updates.push_back({std::move(bad[i].update.params), bad[i].update.samples});
      if (bad[i].attacked) rec.audits.emplace_back(attackers[i], bad[i].audit);
      for (auto& note : bad[i].notes) rec.notes.push_back("client " + std::to_string(attackers[i]) + ": " + note);
    }

    if (updates.empty()) {
      rec.no_update = true;
      rec.notes.push_back("no participants left; previous model carried forward");
    } else {
      run.model = aggregate(updates);
    }
    rec.test_metrics = evaluate(run.model, test);
    run.rounds.push_back(std::move(rec));
  }
  return run;
}

CentralizedRun run_centralized(const LabeledDataset& train, const LabeledDataset& test,
                               const TrainingHyperparams& hyper, const attack::AttackConfig& cfg,
                               const ModelSpec& model, std::uint64_t seed) {
  hyper.validate();
  cfg.validate();
  train.validate();
  test.validate();
  CentralizedRun run;
  const LabeledDataset poisoned = poison_local(train, cfg, derive_seed(seed, {stream::kAttack}), run.audit, run.notes);
  const auto dims = model.layer_dims(train.features.cols(), train.n_classes());
  const auto init = nn::init_model<double>(std::span<const nn::Index>(dims), model.init_range, seed);
  run.model = train_epochs(init, poisoned, hyper, hyper.local_epochs, client_stream_seed(seed, 0), 0).params;
  run.metrics = evaluate(run.model, test);
  return run;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json to_json(const RoundRecord& record, const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["round"] = record.round;
  j["honest_selected"] = record.honest_selected;
  j["malicious_selected"] = record.malicious_selected;
  j["dropped"] = record.dropped;
  nlohmann::ordered_json parts = nlohmann::ordered_json::array();
  for (const auto& p : record.participants) {
    nlohmann::ordered_json e;
    e["client"] = p.client;
    e["role"] = p.malicious ? "malicious" : "honest";
    e["samples"] = p.samples;
    e["local_loss"] = p.loss;
    parts.push_back(std::move(e));
  }
  j["participants"] = std::move(parts);
  j["no_update"] = record.no_update;
  j["test_metrics"] = metrics::to_json(record.test_metrics, class_names);
  nlohmann::ordered_json audits = nlohmann::ordered_json::array();
  for (const auto& [client, audit] : record.audits) {
    auto a = attack::to_json(audit);
    a["client"] = client;
    a["aggregation_weight_inflated"] = audit.injected > 0;
    audits.push_back(std::move(a));
  }
  j["attack_audit"] = std::move(audits);
  j["notes"] = record.notes;
  return j;
}

nlohmann::ordered_json model_to_json(const Params& params) {
  nlohmann::ordered_json j;
  j["layer_dims"] = params.layer_dims();
  nlohmann::ordered_json layers = nlohmann::ordered_json::array();
  for (const auto& l : params.layers) {
    nlohmann::ordered_json w = nlohmann::ordered_json::array();
    for (nn::Index r = 0; r < l.weights.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(l.weights.cols()));
      for (nn::Index c = 0; c < l.weights.cols(); ++c) row[static_cast<std::size_t>(c)] = l.weights(r, c);
      w.push_back(std::move(row));
    }
    nlohmann::ordered_json layer;
    layer["weights"] = std::move(w);
    layer["bias"] = std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size());
    layers.push_back(std::move(layer));
  }
  j["layers"] = std::move(layers);
  return j;
}

}  // namespace fedpoison::federation
