#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "gtp/classes.hpp"

namespace gtp {

/// counts[actual][predicted].
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 4);
  /// Square count table; throws ValidationError if ragged.
  static ConfusionMatrix from_counts(const std::vector<std::vector<std::uint64_t>>& counts);

  std::size_t classes() const noexcept { return n_; }
  std::uint64_t at(std::size_t actual, std::size_t predicted) const { return counts_[actual * n_ + predicted]; }
  void add(std::size_t actual, std::size_t predicted);

  std::uint64_t total() const noexcept;
  std::uint64_t row_sum(std::size_t actual) const;
  std::uint64_t col_sum(std::size_t predicted) const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t n_;
  std::vector<std::uint64_t> counts_;
};

/// Throws on length mismatch, empty input or out-of-range indices.
ConfusionMatrix confusion_matrix(std::span<const std::size_t> predicted, std::span<const std::size_t> actual,
                                 std::size_t classes = 4);

/// (1/C) sum_i 2 R_i P_i / (R_i + P_i); a class with no true positives
/// contributes 0 (covers the 0/0 cases). Throws UndefinedMetricError for an
/// empty matrix.
double macro_f1(const ConfusionMatrix& cm);

/// Recall per class, TP_i / row_i; nullopt for classes without samples.
std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm);

/// Mann-Whitney U / (P N) with average ranks for ties. Throws
/// UndefinedMetricError when either group is empty.
double auc_binary(std::span<const double> scores, std::span<const bool> positive);

/// One-vs-all AUC of `positive_class` scored by its probability column.
double auc_roc_one_vs_all(std::span<const Probs> scores, std::span<const std::size_t> actual,
                          std::size_t positive_class);

struct RocPoint {
  double threshold;  // +inf for the (0, 0) starting point
  double fpr;
  double tpr;
};

/// One point per distinct score (descending), preceded by (inf, 0, 0).
std::vector<RocPoint> roc_curve(std::span<const Probs> scores, std::span<const std::size_t> actual,
                                std::size_t positive_class);
/// Trapezoidal area under a ROC curve.
double roc_area(std::span<const RocPoint> curve);

struct MetricsReport {
  std::string model;
  ConfusionMatrix confusion{4};
  std::array<std::optional<double>, 4> per_class_accuracy{};
  double macro_f1 = 0.0;
  std::array<std::optional<double>, 4> auc{};

  /// {"model", "macro_f1", "auc": {class: value|"undefined"},
  ///  "accuracy": {class: value|"undefined"}, "confusion": [[...]]}
  nlohmann::json to_json() const;
  static MetricsReport from_json(const nlohmann::json& j);
  std::vector<std::string> undefined_metrics() const;
};

/// Predicted classes by argmax, then every metric against `actual`.
MetricsReport compute_report(std::span<const Probs> probs, std::span<const std::size_t> actual);
/// Same, with decisions made elsewhere (e.g. by voting); `probs` only feed AUC.
MetricsReport compute_report(std::span<const Probs> probs, std::span<const std::size_t> predicted,
                             std::span<const std::size_t> actual);

/// Header row of class names, then one row per actual class.
std::string confusion_to_csv(const ConfusionMatrix& cm);
/// threshold,fpr,tpr rows.
std::string roc_to_csv(std::span<const RocPoint> curve);

}  // namespace gtp
