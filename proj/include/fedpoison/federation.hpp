#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "fedpoison/attack.hpp"
#include "fedpoison/data.hpp"
#include "fedpoison/errors.hpp"
#include "fedpoison/metrics.hpp"
#include "fedpoison/nn.hpp"
#include "json.hpp"

namespace fedpoison::federation {

using Params = nn::ModelParams<double>;
using data::LabeledDataset;
using nn::TrainingHyperparams;

struct ModelSpec {
  std::vector<int> hidden{32};
  double init_range = 0.05;

  std::vector<nn::Index> layer_dims(nn::Index inputs, nn::Index classes) const;
};

struct FederationConfig {
  int honest = 10;     // K_H
  int malicious = 0;   // K_M
  double c_h = 1.0;
  double c_m = 1.0;
  int rounds = 10;
  TrainingHyperparams hyper;
  attack::AttackConfig attack;
  ModelSpec model;
  data::PartitionPlan partition;  // client k owns partition.client_indices[k]
  std::uint64_t seed = 0;
  int jobs = 1;  // threads for client updates within a round

  void validate() const;
  std::vector<int> honest_ids() const;
  std::vector<int> malicious_ids() const;
};

// ---------------------------------------------------------------------------
// Aggregation

template <typename Scalar>
struct WeightedModel {
  nn::ModelParams<Scalar> params;
  std::size_t samples = 0;
};

/// Sample-weighted mean sum_k (n_k / n) f_k, evaluated as f_0 + sum_k (n_k / n)(f_k - f_0)
/// so identical inputs and a single input come back bit-exact.
template <typename Scalar>
nn::ModelParams<Scalar> aggregate(std::span<const WeightedModel<Scalar>> updates) {
  if (updates.empty()) throw ShapeError("aggregate needs at least one update");
  std::size_t total = 0;
  for (const auto& u : updates) {
    if (!nn::same_shape(u.params, updates.front().params)) throw ShapeError("client updates differ in shape");
    total += u.samples;
  }
  if (total == 0) throw DataError("aggregate over zero total samples");
  const auto& anchor = updates.front().params;
  nn::ModelParams<Scalar> out = anchor;
  for (std::size_t k = 1; k < updates.size(); ++k) {
    const Scalar w = Scalar(static_cast<double>(updates[k].samples) / static_cast<double>(total));
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      out.layers[l].weights += w * (updates[k].params.layers[l].weights - anchor.layers[l].weights);
      out.layers[l].bias += w * (updates[k].params.layers[l].bias - anchor.layers[l].bias);
    }
  }
  return out;
}

template <typename Scalar>
nn::ModelParams<Scalar> aggregate(const std::vector<WeightedModel<Scalar>>& updates) {
  return aggregate(std::span<const WeightedModel<Scalar>>(updates));
}

// ---------------------------------------------------------------------------
// Client side

/// max(floor(C * |ids|), 1); the floor tolerates products like 0.29 * 100.
std::size_t subset_size(std::size_t count, double fraction);

/// Seeded sample without replacement, deterministic per (seed, round).
std::set<int> select_subset(std::span<const int> ids, double fraction, std::uint64_t seed, int round);

/// Training stream for one client; client 0 of seed s is the centralized stream of s.
std::uint64_t client_stream_seed(std::uint64_t seed, int client_id);

struct TrainOutcome {
  Params params;
  std::int64_t steps = 0;
};

/// Minibatch training for `epochs` epochs. Epoch e (counted from `first_epoch`) shuffles
/// with a key derived from (stream, e); batch b of it draws dropout from (stream, e, b).
TrainOutcome train_epochs(const Params& start, const LabeledDataset& local, const TrainingHyperparams& hyper,
                          int epochs, std::uint64_t stream_seed, std::int64_t first_epoch);

/// Mean cross-entropy (plus L2 penalty) in eval mode.
double evaluate_loss(const Params& params, const LabeledDataset& ds, double l2_coef);
metrics::MetricsReport evaluate(const Params& params, const LabeledDataset& ds);

struct ClientResult {
  Params params;
  double loss = 0.0;
  std::size_t samples = 0;
};

ClientResult client_update_honest(const Params& global, const LabeledDataset& local, const TrainingHyperparams& hyper,
                                  std::uint64_t seed, std::int64_t first_epoch = 0);

struct RoundContext {
  int round = 1;
  int self_id = 0;
  std::int64_t first_epoch = 0;
  const attack::LossHistory* history = nullptr;
  std::set<int> honest_selection;
  std::set<int> malicious_ids;
};

struct MaliciousResult {
  ClientResult update;
  std::set<int> selection;  // honest selection after this client's drops
  bool attacked = false;
  attack::AttackAudit audit;
  std::vector<std::string> notes;
};

/// Applies the full attack pipeline to the local copy then trains like an honest client.
/// Rows poisoned: relabeled per strategy plus round(inject_ratio * alpha * n_target) injected.
LabeledDataset poison_local(const LabeledDataset& local, const attack::AttackConfig& cfg, std::uint64_t seed,
                            attack::AttackAudit& audit, std::vector<std::string>& notes);

MaliciousResult client_update_malicious(const Params& global, const LabeledDataset& local,
                                        const TrainingHyperparams& hyper, const attack::AttackConfig& cfg,
                                        const RoundContext& ctx, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Server side

struct Participant {
  int client = 0;
  bool malicious = false;
  std::size_t samples = 0;
  double loss = 0.0;
};

struct RoundRecord {
  int round = 0;
  std::set<int> honest_selected;     // before drops
  std::set<int> malicious_selected;
  std::set<int> dropped;
  std::vector<Participant> participants;  // sorted by client id
  bool no_update = false;
  metrics::MetricsReport test_metrics;
  std::vector<std::pair<int, attack::AttackAudit>> audits;
  std::vector<std::string> notes;
};

nlohmann::ordered_json to_json(const RoundRecord& record, const std::vector<std::string>& class_names);

struct FederatedRun {
  Params model;
  std::vector<RoundRecord> rounds;
};

FederatedRun run_federated(const FederationConfig& config, const LabeledDataset& train, const LabeledDataset& test);

struct CentralizedRun {
  Params model;
  metrics::MetricsReport metrics;
  attack::AttackAudit audit;
  std::vector<std::string> notes;
};

/// Trains one model for hyper.local_epochs epochs on the (possibly poisoned) training set.
CentralizedRun run_centralized(const LabeledDataset& train, const LabeledDataset& test,
                               const TrainingHyperparams& hyper, const attack::AttackConfig& cfg,
                               const ModelSpec& model, std::uint64_t seed);

/// {"layer_dims": [...], "layers": [{"weights": [[...]], "bias": [...]}]}
nlohmann::ordered_json model_to_json(const Params& params);

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Exceptions propagate (first one wins).
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace fedpoison::federation
