#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedpoison/nn.hpp"

namespace fedpoison::data {

using Matrix = nn::Matrix<double>;
using Vector = nn::Vector<double>;

// ---------------------------------------------------------------------------
// Datasets

enum class ColumnKind { numeric, categorical };

/// Untyped table as read from disk. Empty cells mark missing values.
struct RawDataset {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;
  std::string label_column;
  std::vector<ColumnKind> kinds;

  std::size_t column_index(std::string_view name) const;
  std::size_t label_index() const { return column_index(label_column); }
};

/// Feature matrix [n x d], integer labels, and the tables that name them.
struct LabeledDataset {
  Matrix features;
  std::vector<int> labels;
  std::vector<std::string> class_names;
  std::vector<std::string> feature_names;

  std::size_t size() const { return labels.size(); }
  int n_classes() const { return static_cast<int>(class_names.size()); }
  std::vector<std::size_t> class_counts() const;
  /// Rows in the order given.
  LabeledDataset select(std::span<const std::size_t> rows) const;
  /// Throws DataError if any invariant is violated.
  void validate() const;
  /// -1 when absent.
  int class_id(std::string_view name) const;
};

/// Concatenates rows; both sides must share class and feature tables.
LabeledDataset concat(const LabeledDataset& head, const LabeledDataset& tail);

// ---------------------------------------------------------------------------
// CSV ingestion

/// RFC 4180 records: comma separated, double-quote escaping, CRLF or LF line ends.
std::vector<std::vector<std::string>> parse_csv(std::istream& in);

/// Header row then data rows. Column kinds are inferred: numeric when every
/// non-empty cell parses as a number, categorical otherwise.
RawDataset load_csv(const std::filesystem::path& path, const std::string& label_column);
RawDataset raw_from_records(std::vector<std::vector<std::string>> records, const std::string& label_column);

/// Parses a full numeric cell (surrounding blanks allowed).
bool parse_number(std::string_view cell, double& out);

// ---------------------------------------------------------------------------
// Preprocessing

/// Drops rows with missing or non-finite cells and exact duplicate rows (first kept).
RawDataset clean(const RawDataset& raw);
RawDataset drop_columns(const RawDataset& raw, std::span<const std::string> names);
/// Label column becomes a sorted class table; categorical columns expand into
/// one indicator column per observed category ("column=value").
LabeledDataset encode_onehot(const RawDataset& raw);

struct TrainTestSplit {
  LabeledDataset train;
  LabeledDataset test;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

/// Seeded uniform split; `stratified` splits each class separately.
TrainTestSplit split_train_test(const LabeledDataset& ds, double train_fraction, std::uint64_t seed,
                                bool stratified = false);

inline constexpr double kStddevFloor = 1e-9;

struct ScalerState {
  Vector mean;
  Vector stddev;
};

/// Per-feature mean and population standard deviation.
ScalerState fit_scaler(const LabeledDataset& train);
LabeledDataset apply_scaler(const LabeledDataset& ds, const ScalerState& scaler);

struct Standardized {
  LabeledDataset train;
  LabeledDataset test;
  ScalerState scaler;
};

/// Fits on train only, applies to both.
Standardized standardize(const LabeledDataset& train, const LabeledDataset& test);

struct PreprocessOptions {
  std::vector<std::string> drop_columns;
  double train_fraction = 0.8;
  bool stratified = false;
  std::uint64_t seed = 0;
};

struct PreprocessResult {
  LabeledDataset train;
  LabeledDataset test;
  ScalerState scaler;
  std::vector<std::string> log;       // one line per pipeline step
  std::vector<std::string> warnings;
};

/// clean -> drop columns -> one-hot -> split -> standardize. Oversampling is a
/// separate call; reshaping is a no-op for a dense model and is logged as such.
PreprocessResult preprocess(const RawDataset& raw, const PreprocessOptions& options);

// ---------------------------------------------------------------------------
// SMOTE

struct SyntheticOrigin {
  std::size_t base;      // row index into the input
  std::size_t neighbor;  // row index into the input
  double weight;         // u in x + u * (x_nn - x)
};

struct SmoteResult {
  LabeledDataset data;                  // input rows first, then synthetic rows
  std::vector<SyntheticOrigin> origins; // one per synthetic row, in order
};

/// Raises every present class to the majority count by interpolating towards
/// one of the k nearest same-class neighbours (Euclidean, ties by row index).
SmoteResult smote_oversample(const LabeledDataset& train, int k_neighbors, std::uint64_t seed);

/// k nearest rows to `row` among `candidates` (excluding `row`), nearest first.
std::vector<std::size_t> nearest_neighbors(const Matrix& features, std::size_t row,
                                           std::span<const std::size_t> candidates, int k);

// ---------------------------------------------------------------------------
// Partitioning across clients

enum class Distribution { iid, noniid };

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> client_indices;
  Distribution distribution = Distribution::iid;
  double beta = 0.0;

  std::size_t client_count() const { return client_indices.size(); }
  /// Disjoint cover of [0, n) with no empty client, else PartitionError.
  void validate(std::size_t n) const;
};

PartitionPlan partition_iid(const LabeledDataset& train, int clients, std::uint64_t seed);
/// Dirichlet(beta) label skew per class.
PartitionPlan partition_noniid(const LabeledDataset& train, int clients, double beta, std::uint64_t seed);

/// {"distribution": ..., "beta": ..., "clients": {"0": [rows...], ...}}
std::string partition_to_json(const PartitionPlan& plan);

// ---------------------------------------------------------------------------
// Synthetic data and label views

/// Gaussian blobs with unit covariance; class 0 is named "Normal", the others
/// "Attack_<k>". Centres are at least `separation` apart.
LabeledDataset generate_synthetic(int n_classes, int n_features, int n_per_class, double separation,
                                  std::uint64_t seed);

/// Every class other than `normal_name` becomes "Attack"; class table is
/// {"Attack", "Normal"}.
LabeledDataset collapse_to_binary(const LabeledDataset& ds, std::string_view normal_name = "Normal");

}  // namespace fedpoison::data
