#include "fedpoison/metrics.hpp"

#include <numeric>
#include <sstream>

#include "fedpoison/errors.hpp"

namespace fedpoison::metrics {

namespace {

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double MetricsReport::macro_precision() const { return mean(precision); }
double MetricsReport::macro_recall() const { return mean(recall); }
double MetricsReport::macro_f1() const { return mean(f1); }

ConfusionMatrix confusion(std::span<const int> preds, std::span<const int> labels, int n_classes) {
  if (preds.size() != labels.size()) throw MetricError("predictions and labels differ in length");
  if (n_classes < 1) throw MetricError("need at least one class");
  ConfusionMatrix cm = ConfusionMatrix::Zero(n_classes, n_classes);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes || preds[i] < 0 || preds[i] >= n_classes)
      throw MetricError("class id out of range at position " + std::to_string(i));
    ++cm(labels[i], preds[i]);
  }
  return cm;
}

MetricsReport summarize(const ConfusionMatrix& cm) {
  if (cm.rows() != cm.cols() || cm.rows() == 0) throw MetricError("confusion matrix must be square and non-empty");
  const std::int64_t total = cm.sum();
  if (total <= 0) throw MetricError("confusion matrix is empty");
  MetricsReport r;
  r.confusion = cm;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  const auto n = static_cast<std::size_t>(cm.rows());
  r.precision.assign(n, 0.0);
  r.recall.assign(n, 0.0);
  r.f1.assign(n, 0.0);
  r.precision_undefined.assign(n, false);
  r.recall_undefined.assign(n, false);
  for (Eigen::Index c = 0; c < cm.rows(); ++c) {
    const auto i = static_cast<std::size_t>(c);
    const auto tp = static_cast<double>(cm(c, c));
    const auto predicted = static_cast<double>(cm.col(c).sum());
    const auto actual = static_cast<double>(cm.row(c).sum());
    if (predicted > 0) r.precision[i] = tp / predicted; else r.precision_undefined[i] = true;
    if (actual > 0) r.recall[i] = tp / actual; else r.recall_undefined[i] = true;
    const double pr = r.precision[i] + r.recall[i];
    r.f1[i] = pr > 0 ? 2.0 * r.precision[i] * r.recall[i] / pr : 0.0;
  }
  return r;
}

double poisoning_attack_rate(double recall_wp, double recall_wop) {
  if (!(recall_wop > 0.0)) throw MetricError("poisoning attack rate is undefined when the baseline recall is 0");
  return 1.0 - recall_wp / recall_wop;
}

std::vector<std::optional<double>> attack_rates(const MetricsReport& poisoned, const MetricsReport& baseline) {
  if (poisoned.recall.size() != baseline.recall.size()) throw MetricError("reports have different class counts");
  std::vector<std::optional<double>> out(poisoned.recall.size());
  for (std::size_t c = 0; c < out.size(); ++c)
    if (baseline.recall[c] > 0.0) out[c] = poisoning_attack_rate(poisoned.recall[c], baseline.recall[c]);
  return out;
}

nlohmann::ordered_json to_json(const MetricsReport& report, const std::vector<std::string>& class_names) {
  nlohmann::ordered_json j;
  j["accuracy"] = report.accuracy;
  j["macro_precision"] = report.macro_precision();
  j["macro_recall"] = report.macro_recall();
  j["macro_f1"] = report.macro_f1();
  nlohmann::ordered_json classes = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < report.precision.size(); ++c) {
    nlohmann::ordered_json e;
    e["class"] = c < class_names.size() ? class_names[c] : std::to_string(c);
    e["precision"] = report.precision[c];
    e["recall"] = report.recall[c];
    e["f1"] = report.f1[c];
    if (report.precision_undefined[c]) e["precision_undefined"] = true;
    if (report.recall_undefined[c]) e["recall_undefined"] = true;
    if (report.poisoning_attack_rate) {
      const auto& rate = (*report.poisoning_attack_rate)[c];
      e["poisoning_attack_rate"] = rate ? nlohmann::ordered_json(*rate) : nlohmann::ordered_json("N/A");
    }
    classes.push_back(std::move(e));
  }
  j["per_class"] = std::move(classes);
  nlohmann::ordered_json cm = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < report.confusion.rows(); ++r) {
    std::vector<std::int64_t> row(static_cast<std::size_t>(report.confusion.cols()));
    for (Eigen::Index c = 0; c < report.confusion.cols(); ++c) row[static_cast<std::size_t>(c)] = report.confusion(r, c);
    cm.push_back(row);
  }
  j["confusion_matrix"] = std::move(cm);
  return j;
}

std::string confusion_to_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
  auto quote = [](const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string q = "\"";
    for (char ch : s) {
      if (ch == '"') q += '"';
      q += ch;
    }
    return q + "\"";
  };
  std::ostringstream out;
  out << "true\\pred";
  for (const auto& n : class_names) out << ',' << quote(n);
  out << '\n';
  for (Eigen::Index r = 0; r < cm.rows(); ++r) {
    out << quote(class_names.at(static_cast<std::size_t>(r)));
    for (Eigen::Index c = 0; c < cm.cols(); ++c) out << ',' << cm(r, c);
    out << '\n';
  }
  return out.str();
}

}  // namespace fedpoison::metrics
