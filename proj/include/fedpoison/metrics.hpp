#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace fedpoison::metrics {

/// Rows are true classes, columns predicted classes.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;

struct MetricsReport {
  ConfusionMatrix confusion;
  double accuracy = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  // Set when the corresponding denominator was zero; the value is then 0.
  std::vector<bool> precision_undefined;
  std::vector<bool> recall_undefined;
  // Filled only when a no-attack baseline is supplied; nullopt where undefined.
  std::optional<std::vector<std::optional<double>>> poisoning_attack_rate;

  int n_classes() const { return static_cast<int>(precision.size()); }
  double macro_precision() const;
  double macro_recall() const;
  double macro_f1() const;
};

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int n_classes);
MetricsReport summarize(const ConfusionMatrix& cm);

/// 1 - recall_wp / recall_wop; MetricError when recall_wop is not positive.
double poisoning_attack_rate(double recall_wp, double recall_wop);

/// Per-class attack rate of `poisoned` against `baseline`, nullopt where the baseline recall is 0.
std::vector<std::optional<double>> attack_rates(const MetricsReport& poisoned, const MetricsReport& baseline);

nlohmann::ordered_json to_json(const MetricsReport& report, const std::vector<std::string>& class_names);
/// Header row "true\\pred,<names...>", then one row per true class.
std::string confusion_to_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names);

}  // namespace fedpoison::metrics
