#include "fedpoison/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fedpoison/errors.hpp"
#include "fedpoison/rng.hpp"

namespace fedpoison::attack {

namespace {

constexpr int kPoisonNeighbors = 5;

std::vector<std::size_t> rows_of_class(const LabeledDataset& ds, int c) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == c) rows.push_back(i);
  return rows;
}

int resolve_target(const LabeledDataset& ds, const AttackConfig& cfg) {
  const int t = ds.class_id(cfg.target_class);
  if (t < 0) throw AttackError("target class '" + cfg.target_class + "' is not in the dataset's class table");
  return t;
}

std::vector<int> non_target_classes(const LabeledDataset& ds, int target) {
  std::vector<int> out;
  for (int c = 0; c < ds.n_classes(); ++c)
    if (c != target) out.push_back(c);
  if (out.empty()) throw AttackError("attack needs at least one class besides the target");
  return out;
}

}  // namespace

void AttackConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("attack rate alpha must lie in [0, 1]");
  if (start_round < 1) throw ConfigError("attack start round must be >= 1");
  if (drop_policy.kind == DropPolicy::Kind::top_ranked && drop_policy.count < 0)
    throw ConfigError("top_ranked drop count must be >= 0");
  if (!(inject_ratio >= 0.0) || !std::isfinite(inject_ratio)) throw ConfigError("inject_ratio must be >= 0");
  if (target_class.empty()) throw ConfigError("target class name is empty");
}

nlohmann::ordered_json to_json(const AttackAudit& audit) {
  nlohmann::ordered_json j;
  j["rows_before"] = audit.rows_before;
  j["rows_after"] = audit.rows_after;
  j["relabeled"] = audit.relabeled_rows;
  if (!audit.partner_rows.empty()) j["swap_partners"] = audit.partner_rows;
  if (!audit.dropped_rows.empty()) j["dropped"] = audit.dropped_rows;
  j["injected"] = audit.injected;
  return j;
}

std::size_t flipped_count(double alpha, std::size_t n_target) {
  return static_cast<std::size_t>(std::llround(alpha * static_cast<double>(n_target)));
}

int majority_non_target(const LabeledDataset& ds, int target) {
  const auto counts = ds.class_counts();
  int best = -1;
  for (int c = 0; c < static_cast<int>(counts.size()); ++c) {
    if (c == target) continue;
    if (best < 0 || counts[static_cast<std::size_t>(c)] > counts[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

int partner_class(const LabeledDataset& ds, const AttackConfig& cfg, int target) {
  if (cfg.partner_class.empty()) {
    const int m = majority_non_target(ds, target);
    if (m < 0) throw AttackError("attack needs a non-target class");
    return m;
  }
  const int m = ds.class_id(cfg.partner_class);
  if (m < 0) throw AttackError("partner class '" + cfg.partner_class + "' is not in the dataset's class table");
  if (m == target) throw AttackError("partner class equals the target class");
  return m;
}

LabeledDataset flip_labels(const LabeledDataset& ds, const AttackConfig& cfg, std::uint64_t seed, AttackAudit* audit) {
  AttackAudit local;
  AttackAudit& a = audit ? *audit : local;
  a.rows_before = ds.size();
  a.rows_after = ds.size();
  if (cfg.alpha == 0.0) return ds;

  const int target = resolve_target(ds, cfg);
  auto targets = rows_of_class(ds, target);
  if (targets.empty()) throw AttackError("target class '" + cfg.target_class + "' has no rows to poison");

  Rng rng = make_rng(seed, {stream::kAttack});
  std::shuffle(targets.begin(), targets.end(), rng);
  std::vector<std::size_t> selected(targets.begin(),
                                    targets.begin() + static_cast<std::ptrdiff_t>(flipped_count(cfg.alpha, targets.size())));
  std::sort(selected.begin(), selected.end());
  a.relabeled_rows = selected;

  LabeledDataset out = ds;
  switch (cfg.strategy) {
    case Strategy::swap: {
      const int partner = partner_class(ds, cfg, target);
      auto partners = rows_of_class(ds, partner);
      std::shuffle(partners.begin(), partners.end(), rng);
      partners.resize(std::min(partners.size(), selected.size()));
      std::sort(partners.begin(), partners.end());
      for (auto r : selected) out.labels[r] = partner;
      for (auto r : partners) out.labels[r] = target;
      a.partner_rows = std::move(partners);
      break;
    }
    case Strategy::shuffle: {
      const auto others = non_target_classes(ds, target);
      std::uniform_int_distribution<std::size_t> pick(0, others.size() - 1);
      for (auto r : selected) out.labels[r] = others[pick(rng)];
      break;
    }
    case Strategy::drop: {
      std::vector<bool> remove(ds.size(), false);
      for (auto r : selected) remove[r] = true;
      std::vector<std::size_t> keep;
      keep.reserve(ds.size() - selected.size());
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (!remove[i]) keep.push_back(i);
      out = ds.select(keep);
      a.dropped_rows = selected;
      a.relabeled_rows.clear();
      break;
    }
    case Strategy::slide:
      for (auto r : selected) out.labels[r] = (target + 1) % ds.n_classes();
      break;
  }
  a.rows_after = out.size();
  return out;
}

LabeledDataset generate_poison_samples(const LabeledDataset& ds, const AttackConfig& cfg, std::size_t count,
                                       std::uint64_t seed, AttackAudit* audit) {
  if (count == 0) return ds;
  const int target = resolve_target(ds, cfg);
  const auto targets = rows_of_class(ds, target);
  if (targets.size() < 2)
    throw AttackError("poison generation needs at least 2 rows of target class '" + cfg.target_class + "'");
  const int majority = partner_class(ds, cfg, target);
  const auto others = non_target_classes(ds, target);

  Eigen::RowVectorXd centroid = Eigen::RowVectorXd::Zero(ds.features.cols());
  if (cfg.clean_label) {
    const auto majority_rows = rows_of_class(ds, majority);
    if (majority_rows.empty()) throw AttackError("clean-label poisoning needs rows of the partner class");
    for (auto r : majority_rows) centroid += ds.features.row(static_cast<Eigen::Index>(r));
    centroid /= static_cast<double>(majority_rows.size());
  }

  Rng rng = make_rng(seed, {stream::kPoison});
  std::uniform_int_distribution<std::size_t> pick_base(0, targets.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, others.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  LabeledDataset out = ds;
  out.features.conservativeResize(ds.features.rows() + static_cast<Eigen::Index>(count), Eigen::NoChange);
  std::map<std::size_t, std::vector<std::size_t>> neighbor_cache;
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t base = targets[pick_base(rng)];
    auto [it, fresh] = neighbor_cache.try_emplace(base);
    if (fresh) it->second = data::nearest_neighbors(ds.features, base, targets, kPoisonNeighbors);
    const auto& nn = it->second;
    const std::size_t neighbor = nn[std::uniform_int_distribution<std::size_t>(0, nn.size() - 1)(rng)];
    const double u = unit(rng);
    const auto x = ds.features.row(static_cast<Eigen::Index>(base));
    Eigen::RowVectorXd row = x + u * (ds.features.row(static_cast<Eigen::Index>(neighbor)) - x);

    int label = target;
    if (cfg.clean_label) {
      row = 0.5 * row + 0.5 * centroid;
    } else {
      switch (cfg.strategy) {
        case Strategy::swap:
        case Strategy::drop: label = majority; break;
        case Strategy::shuffle: label = others[pick_other(rng)]; break;
        case Strategy::slide: label = (target + 1) % ds.n_classes(); break;
      }
    }
    out.features.row(ds.features.rows() + static_cast<Eigen::Index>(s)) = row;
    out.labels.push_back(label);
  }
  if (audit) {
    audit->injected += count;
    audit->rows_after = out.size();
  }
  return out;
}

std::vector<int> ClientRanking::order() const {
  std::vector<int> ids;
  ids.reserve(entries.size());
  for (const auto& e : entries) ids.push_back(e.first);
  return ids;
}

ClientRanking identify_clients(const LossHistory& history) {
  ClientRanking ranking;
  for (const auto& [client, losses] : history) {
    if (losses.size() < 2) continue;
    double total = 0.0;
    for (std::size_t t = 0; t + 1 < losses.size(); ++t) total += losses[t] - losses[t + 1];
    ranking.entries.emplace_back(client, total / static_cast<double>(losses.size() - 1));
  }
  if (ranking.entries.empty()) throw RankingError("client ranking needs at least two rounds of loss history");
  std::stable_sort(ranking.entries.begin(), ranking.entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return ranking;
}

std::set<int> drop_clients(const std::set<int>& selected, const ClientRanking& ranking, const DropPolicy& policy,
                           const std::set<int>& malicious) {
  if (!policy.active()) return selected;
  std::set<int> out = selected;
  int removed = 0;
  for (const auto& [client, score] : ranking.entries) {
    if (removed >= policy.count) break;
    if (malicious.contains(client) || !out.contains(client)) continue;
    out.erase(client);
    ++removed;
  }
  return out;
}

const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::swap: return "swap";
    case Strategy::shuffle: return "shuffle";
    case Strategy::drop: return "drop";
    case Strategy::slide: return "slide";
  }
  return "?";
}

const char* to_string(Knowledge k) { return k == Knowledge::white_box ? "white_box" : "black_box"; }

Strategy parse_strategy(const std::string& s) {
  if (s == "swap") return Strategy::swap;
  if (s == "shuffle") return Strategy::shuffle;
  if (s == "drop") return Strategy::drop;
  if (s == "slide") return Strategy::slide;
  throw ConfigError("unknown assignment strategy '" + s + "' (expected swap, shuffle, drop or slide)");
}

Knowledge parse_knowledge(const std::string& s) {
  if (s == "white_box") return Knowledge::white_box;
  if (s == "black_box") return Knowledge::black_box;
  throw ConfigError("unknown knowledge mode '" + s + "' (expected white_box or black_box)");
}

}  // namespace fedpoison::attack
