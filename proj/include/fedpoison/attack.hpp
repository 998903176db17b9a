#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedpoison/data.hpp"
#include "json.hpp"

namespace fedpoison::attack {

using data::LabeledDataset;

enum class Strategy { swap, shuffle, drop, slide };
enum class Knowledge { white_box, black_box };

struct DropPolicy {
  enum class Kind { none, top_ranked };
  Kind kind = Kind::none;
  int count = 0;  // m for top_ranked

  static DropPolicy none() { return {}; }
  static DropPolicy top_ranked(int m) { return {Kind::top_ranked, m}; }
  bool active() const { return kind == Kind::top_ranked && count > 0; }
};

struct AttackConfig {
  double alpha = 0.0;
  std::string target_class = "Normal";
  Strategy strategy = Strategy::swap;
  int start_round = 1;
  Knowledge knowledge = Knowledge::white_box;
  bool clean_label = false;
  DropPolicy drop_policy;
  /// Injected rows per malicious client = round(inject_ratio * alpha * local target count).
  double inject_ratio = 1.0;
  /// Class that poisoned target rows are relabeled to. Empty means the most populous
  /// non-target class of the data being poisoned.
  std::string partner_class;

  void validate() const;
  /// Attack is switched off entirely (no relabeling, injection or dropping).
  bool inert() const { return alpha == 0.0 && !drop_policy.active(); }
};

/// What one application of the attack did to a local dataset.
struct AttackAudit {
  std::vector<std::size_t> relabeled_rows;  // indices into the input
  std::vector<std::size_t> partner_rows;    // swap partners relabeled to the target class
  std::vector<std::size_t> dropped_rows;
  std::size_t injected = 0;
  std::size_t rows_before = 0;
  std::size_t rows_after = 0;
};

nlohmann::ordered_json to_json(const AttackAudit& audit);

/// round(alpha * n_target), the number of target rows an attack relabels.
std::size_t flipped_count(double alpha, std::size_t n_target);

/// Most populous class other than `target` (lowest id on ties), -1 if none.
int majority_non_target(const LabeledDataset& ds, int target);

/// Resolved partner class id for `ds`.
int partner_class(const LabeledDataset& ds, const AttackConfig& cfg, int target);

/// Relabels a seeded sample of target-class rows. Features never change.
LabeledDataset flip_labels(const LabeledDataset& ds, const AttackConfig& cfg, std::uint64_t seed,
                           AttackAudit* audit = nullptr);

/// Appends `count` rows interpolated between target-class neighbours. Labels are
/// wrong per strategy, or kept for a clean-label attack whose features are pulled
/// half-way towards the majority non-target centroid.
LabeledDataset generate_poison_samples(const LabeledDataset& ds, const AttackConfig& cfg, std::size_t count,
                                       std::uint64_t seed, AttackAudit* audit = nullptr);

/// Per client, the losses of successive broadcast models on that client's data.
using LossHistory = std::map<int, std::vector<double>>;

struct ClientRanking {
  std::vector<std::pair<int, double>> entries;  // (client id, mean loss decrease), best first

  std::vector<int> order() const;
};

/// Scores every client with at least two observations; RankingError if none has.
ClientRanking identify_clients(const LossHistory& history);

/// Removes the policy's m best-ranked honest clients from `selected`.
std::set<int> drop_clients(const std::set<int>& selected, const ClientRanking& ranking, const DropPolicy& policy,
                           const std::set<int>& malicious);

const char* to_string(Strategy s);
const char* to_string(Knowledge k);
Strategy parse_strategy(const std::string& s);
Knowledge parse_knowledge(const std::string& s);

}  // namespace fedpoison::attack
