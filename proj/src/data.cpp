#include "fedpoison/data.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <unordered_set>

#include "fedpoison/errors.hpp"
#include "fedpoison/rng.hpp"
#include "json.hpp"

namespace fedpoison::data {

// ---------------------------------------------------------------------------
// LabeledDataset

std::vector<std::size_t> LabeledDataset::class_counts() const {
  std::vector<std::size_t> counts(class_names.size(), 0);
  for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
  return counts;
}

LabeledDataset LabeledDataset::select(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.class_names = class_names;
  out.feature_names = feature_names;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= size()) throw DataError("row index " + std::to_string(rows[i]) + " out of range");
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
    out.labels.push_back(labels[rows[i]]);
  }
  return out;
}

void LabeledDataset::validate() const {
  if (labels.empty()) throw DataError("dataset is empty");
  if (features.rows() != static_cast<Eigen::Index>(labels.size()))
    throw DataError("feature rows and label count differ");
  if (!feature_names.empty() && static_cast<Eigen::Index>(feature_names.size()) != features.cols())
    throw DataError("feature name table does not match feature width");
  for (int y : labels)
    if (y < 0 || y >= n_classes()) throw DataError("label " + std::to_string(y) + " outside the class table");
  if (!features.allFinite()) throw DataError("dataset contains non-finite features");
}

int LabeledDataset::class_id(std::string_view name) const {
  auto it = std::find(class_names.begin(), class_names.end(), name);
  return it == class_names.end() ? -1 : static_cast<int>(it - class_names.begin());
}

LabeledDataset concat(const LabeledDataset& head, const LabeledDataset& tail) {
  if (head.class_names != tail.class_names || head.features.cols() != tail.features.cols())
    throw DataError("cannot concatenate datasets with different class or feature tables");
  LabeledDataset out;
  out.class_names = head.class_names;
  out.feature_names = head.feature_names;
  out.features.resize(head.features.rows() + tail.features.rows(), head.features.cols());
  out.features << head.features, tail.features;
  out.labels = head.labels;
  out.labels.insert(out.labels.end(), tail.labels.begin(), tail.labels.end());
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

RawDataset clean(const RawDataset& raw) {
  RawDataset out;
  out.columns = raw.columns;
  out.label_column = raw.label_column;
  out.kinds = raw.kinds;
  std::unordered_set<std::string> seen;
  for (const auto& row : raw.rows) {
    bool corrupt = false;
    for (std::size_t c = 0; c < row.size() && !corrupt; ++c) {
      if (row[c].empty()) {
        corrupt = true;
      } else if (raw.kinds[c] == ColumnKind::numeric) {
        double v = 0.0;
        corrupt = !parse_number(row[c], v) || !std::isfinite(v);
      }
    }
    if (corrupt) continue;
    std::string key;
    for (const auto& cell : row) {
      key += cell;
      key.push_back('\x1f');
    }
    if (seen.insert(std::move(key)).second) out.rows.push_back(row);
  }
  return out;
}

RawDataset drop_columns(const RawDataset& raw, std::span<const std::string> names) {
  std::vector<bool> keep(raw.columns.size(), true);
  for (const auto& name : names) {
    const auto idx = raw.column_index(name);
    if (raw.columns[idx] == raw.label_column) throw ConfigError("cannot drop the label column '" + name + "'");
    keep[idx] = false;
  }
  RawDataset out;
  out.label_column = raw.label_column;
  for (std::size_t c = 0; c < raw.columns.size(); ++c)
    if (keep[c]) {
      out.columns.push_back(raw.columns[c]);
      out.kinds.push_back(raw.kinds[c]);
    }
  out.rows.reserve(raw.rows.size());
  for (const auto& row : raw.rows) {
    std::vector<std::string> kept;
    kept.reserve(out.columns.size());
    for (std::size_t c = 0; c < row.size(); ++c)
      if (keep[c]) kept.push_back(row[c]);
    out.rows.push_back(std::move(kept));
  }
  return out;
}

LabeledDataset encode_onehot(const RawDataset& raw) {
  if (raw.rows.empty()) throw DataError("no rows left to encode");
  const std::size_t label_col = raw.label_index();

  std::set<std::string> class_set;
  for (const auto& row : raw.rows) class_set.insert(row[label_col]);
  LabeledDataset out;
  out.class_names.assign(class_set.begin(), class_set.end());
  std::map<std::string, int> class_ids;
  for (std::size_t i = 0; i < out.class_names.size(); ++i) class_ids[out.class_names[i]] = static_cast<int>(i);

  // Output layout: one slot per numeric column, one block per categorical column.
  struct Block {
    std::size_t source;
    std::size_t offset;
    std::map<std::string, std::size_t> categories;  // value -> position within block
  };
  std::vector<Block> blocks;
  std::size_t width = 0;
  for (std::size_t c = 0; c < raw.columns.size(); ++c) {
    if (c == label_col) continue;
    Block b{c, width, {}};
    if (raw.kinds[c] == ColumnKind::categorical) {
      std::set<std::string> values;
      for (const auto& row : raw.rows) values.insert(row[c]);
      std::size_t k = 0;
      for (const auto& v : values) {
        b.categories[v] = k++;
        out.feature_names.push_back(raw.columns[c] + "=" + v);
      }
      width += values.size();
    } else {
      out.feature_names.push_back(raw.columns[c]);
      width += 1;
    }
    blocks.push_back(std::move(b));
  }

  out.features = Matrix::Zero(static_cast<Eigen::Index>(raw.rows.size()), static_cast<Eigen::Index>(width));
  out.labels.reserve(raw.rows.size());
  for (std::size_t r = 0; r < raw.rows.size(); ++r) {
    const auto& row = raw.rows[r];
    const auto ri = static_cast<Eigen::Index>(r);
    for (const auto& b : blocks) {
      if (b.categories.empty()) {
        double v = 0.0;
        if (!parse_number(row[b.source], v))
          throw DataError("row " + std::to_string(r) + ", column '" + raw.columns[b.source] + "' is not numeric");
        out.features(ri, static_cast<Eigen::Index>(b.offset)) = v;
      } else {
        out.features(ri, static_cast<Eigen::Index>(b.offset + b.categories.at(row[b.source]))) = 1.0;
      }
    }
    out.labels.push_back(class_ids.at(row[label_col]));
  }
  return out;
}

TrainTestSplit split_train_test(const LabeledDataset& ds, double train_fraction, std::uint64_t seed, bool stratified) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
  Rng rng = make_rng(seed, {stream::kSplit});
  TrainTestSplit split;
  auto take = [&](std::vector<std::size_t> rows) {
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows.size())));
    split.train_rows.insert(split.train_rows.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test_rows.insert(split.test_rows.end(), rows.begin() + static_cast<std::ptrdiff_t>(n_train), rows.end());
  };
  if (stratified) {
    std::vector<std::vector<std::size_t>> per_class(ds.class_names.size());
    for (std::size_t i = 0; i < ds.size(); ++i) per_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
    for (auto& rows : per_class) take(std::move(rows));
  } else {
    std::vector<std::size_t> rows(ds.size());
    std::iota(rows.begin(), rows.end(), 0);
    take(std::move(rows));
  }
  std::sort(split.train_rows.begin(), split.train_rows.end());
  std::sort(split.test_rows.begin(), split.test_rows.end());
  if (split.train_rows.empty()) throw DataError("train split is empty");
  if (split.test_rows.empty()) throw DataError("test split is empty");
  split.train = ds.select(split.train_rows);
  split.test = ds.select(split.test_rows);
  return split;
}

ScalerState fit_scaler(const LabeledDataset& train) {
  if (train.size() == 0) throw DataError("cannot fit a scaler on an empty dataset");
  ScalerState s;
  s.mean = train.features.colwise().mean().transpose();
  const Matrix centered = train.features.rowwise() - s.mean.transpose();
  s.stddev = (centered.array().square().colwise().sum() / static_cast<double>(train.size())).sqrt().transpose();
  s.stddev = s.stddev.cwiseMax(kStddevFloor);
  return s;
}

LabeledDataset apply_scaler(const LabeledDataset& ds, const ScalerState& scaler) {
  if (scaler.mean.size() != ds.features.cols()) throw ShapeError("scaler width does not match dataset");
  LabeledDataset out = ds;
  out.features = (ds.features.rowwise() - scaler.mean.transpose()).array().rowwise() /
                 scaler.stddev.transpose().array();
  return out;
}

Standardized standardize(const LabeledDataset& train, const LabeledDataset& test) {
  Standardized s;
  s.scaler = fit_scaler(train);
  s.train = apply_scaler(train, s.scaler);
  s.test = apply_scaler(test, s.scaler);
  return s;
}

PreprocessResult preprocess(const RawDataset& raw, const PreprocessOptions& options) {
  PreprocessResult result;
  RawDataset cleaned = clean(raw);
  result.log.push_back("clean: " + std::to_string(raw.rows.size()) + " -> " + std::to_string(cleaned.rows.size()) +
                       " rows");
  if (cleaned.rows.empty()) throw DataError("no rows left after cleaning");
  cleaned = drop_columns(cleaned, options.drop_columns);
  result.log.push_back("drop columns: " + std::to_string(options.drop_columns.size()) + " removed");
  LabeledDataset encoded = encode_onehot(cleaned);
  result.log.push_back("one-hot: " + std::to_string(encoded.features.cols()) + " features, " +
                       std::to_string(encoded.n_classes()) + " classes");
  auto split = split_train_test(encoded, options.train_fraction, options.seed, options.stratified);
  result.log.push_back("split: " + std::to_string(split.train.size()) + " train / " +
                       std::to_string(split.test.size()) + " test");
  auto standardized = standardize(split.train, split.test);
  result.log.push_back("standardize: scaler fitted on train");
  result.log.push_back("reshape: not needed for a dense model");

  const auto train_counts = standardized.train.class_counts();
  const auto test_counts = standardized.test.class_counts();
  for (std::size_t c = 0; c < train_counts.size(); ++c)
    if (train_counts[c] == 0 && test_counts[c] > 0)
      result.warnings.push_back("class '" + encoded.class_names[c] + "' appears only in the test split");

  result.train = std::move(standardized.train);
  result.test = std::move(standardized.test);
  result.scaler = std::move(standardized.scaler);
  return result;
}

// ---------------------------------------------------------------------------
// SMOTE

std::vector<std::size_t> nearest_neighbors(const Matrix& features, std::size_t row,
                                           std::span<const std::size_t> candidates, int k) {
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(candidates.size());
  const auto x = features.row(static_cast<Eigen::Index>(row));
  for (auto c : candidates) {
    if (c == row) continue;
    dist.emplace_back((features.row(static_cast<Eigen::Index>(c)) - x).squaredNorm(), c);
  }
  const auto keep = std::min(dist.size(), static_cast<std::size_t>(std::max(k, 0)));
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(keep), dist.end());
  std::vector<std::size_t> out;
  out.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) out.push_back(dist[i].second);
  return out;
}

SmoteResult smote_oversample(const LabeledDataset& train, int k_neighbors, std::uint64_t seed) {
  if (k_neighbors < 1) throw ConfigError("SMOTE needs k_neighbors >= 1");
  train.validate();
  const auto counts = train.class_counts();
  const std::size_t majority = *std::max_element(counts.begin(), counts.end());

  std::vector<std::vector<std::size_t>> members(counts.size());
  for (std::size_t i = 0; i < train.size(); ++i) members[static_cast<std::size_t>(train.labels[i])].push_back(i);

  SmoteResult result;
  std::vector<int> new_labels;
  std::vector<Eigen::RowVectorXd> new_rows;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0 || counts[c] == majority) continue;
    if (counts[c] < 2)
      throw OversamplingError("class '" + train.class_names[c] + "' has a single sample; SMOTE needs at least 2");
    Rng rng = make_rng(seed, {stream::kSmote, c});
    std::uniform_int_distribution<std::size_t> pick_base(0, counts[c] - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::map<std::size_t, std::vector<std::size_t>> neighbor_cache;
    for (std::size_t s = counts[c]; s < majority; ++s) {
      const std::size_t base = members[c][pick_base(rng)];
      auto [it, fresh] = neighbor_cache.try_emplace(base);
      if (fresh) it->second = nearest_neighbors(train.features, base, members[c], k_neighbors);
      const auto& nn = it->second;
      std::uniform_int_distribution<std::size_t> pick_nn(0, nn.size() - 1);
      const std::size_t neighbor = nn[pick_nn(rng)];
      const double u = unit(rng);
      const auto x = train.features.row(static_cast<Eigen::Index>(base));
      new_rows.push_back(x + u * (train.features.row(static_cast<Eigen::Index>(neighbor)) - x));
      new_labels.push_back(static_cast<int>(c));
      result.origins.push_back({base, neighbor, u});
    }
  }

  result.data.class_names = train.class_names;
  result.data.feature_names = train.feature_names;
  result.data.features.resize(train.features.rows() + static_cast<Eigen::Index>(new_rows.size()),
                              train.features.cols());
  result.data.features.topRows(train.features.rows()) = train.features;
  for (std::size_t i = 0; i < new_rows.size(); ++i)
    result.data.features.row(train.features.rows() + static_cast<Eigen::Index>(i)) = new_rows[i];
  result.data.labels = train.labels;
  result.data.labels.insert(result.data.labels.end(), new_labels.begin(), new_labels.end());
  return result;
}

// ---------------------------------------------------------------------------
// Partitioning

void PartitionPlan::validate(std::size_t n) const {
  std::vector<bool> seen(n, false);
  std::size_t covered = 0;
  for (std::size_t k = 0; k < client_indices.size(); ++k) {
    if (client_indices[k].empty()) throw PartitionError("client " + std::to_string(k) + " has no samples");
    for (auto r : client_indices[k]) {
      if (r >= n) throw PartitionError("row " + std::to_string(r) + " out of range");
      if (seen[r]) throw PartitionError("row " + std::to_string(r) + " assigned twice");
      seen[r] = true;
      ++covered;
    }
  }
  if (covered != n) throw PartitionError("partition does not cover every row");
}

namespace {

void check_partition_args(std::size_t n, int clients) {
  if (clients < 1) throw PartitionError("need at least one client");
  if (n < static_cast<std::size_t>(clients))
    throw PartitionError("cannot split " + std::to_string(n) + " rows across " + std::to_string(clients) +
                         " clients");
}

}  // namespace

PartitionPlan partition_iid(const LabeledDataset& train, int clients, std::uint64_t seed) {
  check_partition_args(train.size(), clients);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = make_rng(seed, {stream::kPartition});
  std::shuffle(order.begin(), order.end(), rng);

  PartitionPlan plan;
  plan.distribution = Distribution::iid;
  const std::size_t k = static_cast<std::size_t>(clients);
  const std::size_t base = order.size() / k;
  const std::size_t extra = order.size() % k;
  std::size_t pos = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t len = base + (c < extra ? 1 : 0);
    std::vector<std::size_t> slice(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                   order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    std::sort(slice.begin(), slice.end());
    plan.client_indices.push_back(std::move(slice));
    pos += len;
  }
  return plan;
}

PartitionPlan partition_noniid(const LabeledDataset& train, int clients, double beta, std::uint64_t seed) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw PartitionError("Dirichlet concentration must be positive");
  check_partition_args(train.size(), clients);
  const std::size_t k = static_cast<std::size_t>(clients);

  PartitionPlan plan;
  plan.distribution = Distribution::noniid;
  plan.beta = beta;
  plan.client_indices.resize(k);

  std::vector<std::vector<std::size_t>> members(train.class_names.size());
  for (std::size_t i = 0; i < train.size(); ++i) members[static_cast<std::size_t>(train.labels[i])].push_back(i);

  for (std::size_t c = 0; c < members.size(); ++c) {
    auto& rows = members[c];
    if (rows.empty()) continue;
    Rng rng = make_rng(seed, {stream::kPartition, c});
    std::shuffle(rows.begin(), rows.end(), rng);
    std::gamma_distribution<double> gamma(beta, 1.0);
    std::vector<double> share(k);
    for (auto& s : share) s = gamma(rng);
    double total = std::accumulate(share.begin(), share.end(), 0.0);
    if (!(total > 0.0)) {
      // Every draw underflowed (tiny beta): the whole class goes to one client.
      std::fill(share.begin(), share.end(), 0.0);
      share[std::uniform_int_distribution<std::size_t>(0, k - 1)(rng)] = 1.0;
      total = 1.0;
    }
    double cumulative = 0.0;
    std::size_t begin = 0;
    for (std::size_t client = 0; client < k; ++client) {
      cumulative += share[client] / total;
      const std::size_t end = client + 1 == k
                                  ? rows.size()
                                  : std::min(rows.size(), static_cast<std::size_t>(std::llround(
                                                              cumulative * static_cast<double>(rows.size()))));
      for (std::size_t r = begin; r < std::max(begin, end); ++r) plan.client_indices[client].push_back(rows[r]);
      begin = std::max(begin, end);
    }
  }

  // Repair: an empty client takes one row from the currently largest client.
  for (std::size_t client = 0; client < k; ++client) {
    if (!plan.client_indices[client].empty()) continue;
    auto largest = std::max_element(plan.client_indices.begin(), plan.client_indices.end(),
                                    [](const auto& a, const auto& b) { return a.size() < b.size(); });
    std::sort(largest->begin(), largest->end());
    plan.client_indices[client].push_back(largest->back());
    largest->pop_back();
  }
  for (auto& idx : plan.client_indices) std::sort(idx.begin(), idx.end());
  return plan;
}

std::string partition_to_json(const PartitionPlan& plan) {
  nlohmann::ordered_json j;
  j["distribution"] = plan.distribution == Distribution::iid ? "iid" : "noniid";
  if (plan.distribution == Distribution::noniid) j["beta"] = plan.beta;
  nlohmann::ordered_json clients = nlohmann::ordered_json::object();
  for (std::size_t k = 0; k < plan.client_indices.size(); ++k) clients[std::to_string(k)] = plan.client_indices[k];
  j["clients"] = std::move(clients);
  return j.dump(2);
}

// ---------------------------------------------------------------------------
// Synthetic data and label views

LabeledDataset generate_synthetic(int n_classes, int n_features, int n_per_class, double separation,
                                  std::uint64_t seed) {
  if (n_classes < 1 || n_features < 1 || n_per_class < 1)
    throw ConfigError("synthetic dataset counts must all be >= 1");
  if (!(separation >= 0.0)) throw ConfigError("separation must be non-negative");

  Rng rng = make_rng(seed, {stream::kSynthetic});
  const auto d = static_cast<Eigen::Index>(n_features);
  std::vector<Eigen::RowVectorXd> centers;
  double half_width = std::max(separation, 1.0);
  for (;;) {
    centers.clear();
    std::uniform_real_distribution<double> coord(-half_width, half_width);
    for (int c = 0; c < n_classes; ++c) {
      bool placed = false;
      for (int attempt = 0; attempt < 2000 && !placed; ++attempt) {
        Eigen::RowVectorXd candidate(d);
        for (Eigen::Index j = 0; j < d; ++j) candidate(j) = coord(rng);
        placed = std::all_of(centers.begin(), centers.end(),
                             [&](const auto& other) { return (other - candidate).norm() >= separation; });
        if (placed) centers.push_back(std::move(candidate));
      }
      if (!placed) break;
    }
    if (static_cast<int>(centers.size()) == n_classes) break;
    half_width *= 1.5;
  }

  LabeledDataset ds;
  ds.class_names.push_back("Normal");
  for (int c = 1; c < n_classes; ++c) ds.class_names.push_back("Attack_" + std::to_string(c));
  for (int j = 0; j < n_features; ++j) ds.feature_names.push_back("f" + std::to_string(j));
  ds.features.resize(static_cast<Eigen::Index>(n_classes) * n_per_class, d);
  std::normal_distribution<double> noise(0.0, 1.0);
  Eigen::Index r = 0;
  for (int c = 0; c < n_classes; ++c)
    for (int i = 0; i < n_per_class; ++i, ++r) {
      for (Eigen::Index j = 0; j < d; ++j) ds.features(r, j) = centers[static_cast<std::size_t>(c)](j) + noise(rng);
      ds.labels.push_back(c);
    }
  return ds;
}

LabeledDataset collapse_to_binary(const LabeledDataset& ds, std::string_view normal_name) {
  const int normal = ds.class_id(normal_name);
  if (normal < 0) throw DataError("class '" + std::string(normal_name) + "' not present; cannot build binary labels");
  LabeledDataset out = ds;
  out.class_names = {"Attack", "Normal"};
  for (auto& y : out.labels) y = (y == normal) ? 1 : 0;
  return out;
}

}  // namespace fedpoison::data
