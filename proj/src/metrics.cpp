#include "gtp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "gtp/error.hpp"

namespace gtp {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : n_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw ValidationError("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_counts(const std::vector<std::vector<std::uint64_t>>& counts) {
  ConfusionMatrix cm(counts.size());
  for (std::size_t a = 0; a < counts.size(); ++a) {
    if (counts[a].size() != counts.size()) throw ValidationError("confusion matrix rows must be square");
    for (std::size_t p = 0; p < counts.size(); ++p) cm.counts_[a * cm.n_ + p] = counts[a][p];
  }
  return cm;
}

void ConfusionMatrix::add(std::size_t actual, std::size_t predicted) {
  if (actual >= n_ || predicted >= n_) {
    throw IndexError("confusion matrix index (" + std::to_string(actual) + ", " + std::to_string(predicted) +
                     ") out of range for " + std::to_string(n_) + " classes");
  }
  ++counts_[actual * n_ + predicted];
}

std::uint64_t ConfusionMatrix::total() const noexcept {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t actual) const {
  std::uint64_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(actual, p);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::uint64_t s = 0;
  for (std::size_t a = 0; a < n_; ++a) s += at(a, predicted);
  return s;
}

ConfusionMatrix confusion_matrix(std::span<const std::size_t> predicted, std::span<const std::size_t> actual,
                                 std::size_t classes) {
  if (predicted.size() != actual.size()) {
    throw ValidationError("confusion_matrix: " + std::to_string(predicted.size()) + " predictions vs " +
                          std::to_string(actual.size()) + " labels");
  }
  if (actual.empty()) throw ValidationError("confusion_matrix: no samples");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < actual.size(); ++i) cm.add(actual[i], predicted[i]);
  return cm;
}

double macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw UndefinedMetricError("macro-F1 of an empty confusion matrix");
  double sum = 0.0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const double tp = static_cast<double>(cm.at(i, i));
    if (tp == 0.0) continue;
    const double precision = tp / static_cast<double>(cm.col_sum(i));
    const double recall = tp / static_cast<double>(cm.row_sum(i));
    sum += 2.0 * recall * precision / (recall + precision);
  }
  return sum / static_cast<double>(cm.classes());
}

std::vector<std::optional<double>> per_class_accuracy(const ConfusionMatrix& cm) {
  std::vector<std::optional<double>> out(cm.classes());
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const auto row = cm.row_sum(i);
    if (row > 0) out[i] = static_cast<double>(cm.at(i, i)) / static_cast<double>(row);
  }
  return out;
}

double auc_binary(std::span<const double> scores, std::span<const bool> positive) {
  if (scores.size() != positive.size()) throw ValidationError("auc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Ranks are doubled so tied groups get integral average ranks.
  double rank_sum_x2 = 0.0;
  std::size_t n_pos = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start + 1;
    while (end < n && scores[order[end]] == scores[order[start]]) ++end;
    const double avg_rank_x2 = static_cast<double>(start + 1 + end);
    for (std::size_t k = start; k < end; ++k) {
      if (positive[order[k]]) {
        rank_sum_x2 += avg_rank_x2;
        ++n_pos;
      }
    }
    start = end;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw UndefinedMetricError("AUC undefined: " + std::to_string(n_pos) + " positives and " + std::to_string(n_neg) +
                               " negatives");
  }
  const double p = static_cast<double>(n_pos);
  const double u = 0.5 * (rank_sum_x2 - p * (p + 1.0));
  return u / (p * static_cast<double>(n_neg));
}

namespace {

void check_scores(std::span<const Probs> scores, std::span<const std::size_t> actual, std::size_t positive_class) {
  if (scores.size() != actual.size()) throw ValidationError("auc: scores and labels differ in length");
  if (positive_class >= 4) throw IndexError("positive class " + std::to_string(positive_class) + " out of range");
}

}  // namespace

double auc_roc_one_vs_all(std::span<const Probs> scores, std::span<const std::size_t> actual,
                          std::size_t positive_class) {
  check_scores(scores, actual, positive_class);
  std::vector<double> s(scores.size());
  std::unique_ptr<bool[]> pos(new bool[scores.size()]);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    s[i] = scores[i][positive_class];
    pos[i] = actual[i] == positive_class;
  }
  return auc_binary(s, std::span<const bool>(pos.get(), scores.size()));
}

std::vector<RocPoint> roc_curve(std::span<const Probs> scores, std::span<const std::size_t> actual,
                                std::size_t positive_class) {
  check_scores(scores, actual, positive_class);
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a][positive_class] > scores[b][positive_class];
  });
  std::size_t n_pos = 0;
  for (auto a : actual) n_pos += a == positive_class;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("ROC undefined without both positives and negatives");

  std::vector<RocPoint> curve{{std::numeric_limits<double>::infinity(), 0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t start = 0; start < n;) {
    const double threshold = scores[order[start]][positive_class];
    std::size_t end = start;
    while (end < n && scores[order[end]][positive_class] == threshold) {
      (actual[order[end]] == positive_class ? tp : fp) += 1;
      ++end;
    }
    curve.push_back({threshold, static_cast<double>(fp) / static_cast<double>(n_neg),
                     static_cast<double>(tp) / static_cast<double>(n_pos)});
    start = end;
  }
  return curve;
}

double roc_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * 0.5 * (curve[i].tpr + curve[i - 1].tpr);
  }
  return area;
}

namespace {

nlohmann::json optional_to_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json("undefined");
}

std::optional<double> optional_from_json(const nlohmann::json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string() && v.get<std::string>() == "undefined") return std::nullopt;
  throw ParseError("metric value must be a number or \"undefined\"");
}

}  // namespace

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json j;
  j["model"] = model;
  j["macro_f1"] = macro_f1;
  nlohmann::json auc_j = nlohmann::json::object(), acc_j = nlohmann::json::object();
  for (std::size_t k = 0; k < 4; ++k) {
    auc_j[std::string(kClassNames[k])] = optional_to_json(auc[k]);
    acc_j[std::string(kClassNames[k])] = optional_to_json(per_class_accuracy[k]);
  }
  j["auc"] = auc_j;
  j["accuracy"] = acc_j;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t a = 0; a < confusion.classes(); ++a) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t p = 0; p < confusion.classes(); ++p) row.push_back(confusion.at(a, p));
    rows.push_back(row);
  }
  j["confusion"] = rows;
  return j;
}

MetricsReport MetricsReport::from_json(const nlohmann::json& j) {
  try {
    MetricsReport r;
    r.model = j.value("model", std::string());
    r.macro_f1 = j.at("macro_f1").get<double>();
    for (std::size_t k = 0; k < 4; ++k) {
      const std::string name(kClassNames[k]);
      r.auc[k] = optional_from_json(j.at("auc").at(name));
      if (j.contains("accuracy")) r.per_class_accuracy[k] = optional_from_json(j.at("accuracy").at(name));
    }
    if (j.contains("confusion")) {
      r.confusion = ConfusionMatrix::from_counts(j.at("confusion").get<std::vector<std::vector<std::uint64_t>>>());
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed metrics report: ") + e.what());
  }
}

std::vector<std::string> MetricsReport::undefined_metrics() const {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < 4; ++k) {
    if (!auc[k]) out.push_back("auc_" + std::string(kClassNames[k]));
    if (!per_class_accuracy[k]) out.push_back("accuracy_" + std::string(kClassNames[k]));
  }
  return out;
}

MetricsReport compute_report(std::span<const Probs> probs, std::span<const std::size_t> actual) {
  std::vector<std::size_t> predicted(probs.size());
  for (std::size_t i = 0; i < probs.size(); ++i) predicted[i] = argmax(probs[i]);
  return compute_report(probs, predicted, actual);
}

MetricsReport compute_report(std::span<const Probs> probs, std::span<const std::size_t> predicted,
                             std::span<const std::size_t> actual) {
  if (probs.size() != actual.size() || predicted.size() != actual.size()) {
    throw ValidationError("report: predictions and labels differ in length");
  }
  MetricsReport r;
  r.confusion = confusion_matrix(predicted, actual, 4);
  r.macro_f1 = macro_f1(r.confusion);
  const auto acc = per_class_accuracy(r.confusion);
  for (std::size_t k = 0; k < 4; ++k) {
    r.per_class_accuracy[k] = acc[k];
    try {
      r.auc[k] = auc_roc_one_vs_all(probs, actual, k);
    } catch (const UndefinedMetricError&) {
      r.auc[k] = std::nullopt;
    }
  }
  return r;
}

std::string confusion_to_csv(const ConfusionMatrix& cm) {
  std::string out;
  for (std::size_t k = 0; k < cm.classes(); ++k) {
    if (k) out += ',';
    out += k < kClassNames.size() ? std::string(kClassNames[k]) : "class" + std::to_string(k);
  }
  out += '\n';
  for (std::size_t a = 0; a < cm.classes(); ++a) {
    for (std::size_t p = 0; p < cm.classes(); ++p) {
      if (p) out += ',';
      out += std::to_string(cm.at(a, p));
    }
    out += '\n';
  }
  return out;
}

std::string roc_to_csv(std::span<const RocPoint> curve) {
  std::string out = "threshold,fpr,tpr\n";
  char buf[96];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.threshold, p.fpr, p.tpr);
    out += buf;
  }
  return out;
}

}  // namespace gtp
