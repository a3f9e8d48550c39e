#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bronchograde::metrics {

/// K x K counts; rows are true labels, columns predicted labels (both 1-based on input).
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int k = 6);

  int classes() const { return k_; }
  std::uint64_t at(int true_index, int pred_index) const {
    return counts_[static_cast<std::size_t>(true_index * k_ + pred_index)];
  }
  std::uint64_t& at(int true_index, int pred_index) {
    return counts_[static_cast<std::size_t>(true_index * k_ + pred_index)];
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  int k_;
  std::vector<std::uint64_t> counts_;
};

/// Labels are 1..k. Throws ValidationError on length mismatch or out-of-range labels.
ConfusionMatrix confusion_matrix(const std::vector<int>& true_labels,
                                 const std::vector<int>& predicted_labels, int k = 6);

enum class Averaging { macro, micro, weighted };

struct ClassMetrics {
  double precision = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  Averaging averaging = Averaging::macro;
  double precision = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
};

/// Per class: precision TP/(TP+FP), sensitivity TP/(TP+FN), specificity TN/(TN+FP),
/// F1 = 2PR/(P+R); zero denominators give 0 and a warning. Averages follow `averaging`;
/// accuracy is trace/total. Throws PreconditionError on an empty matrix.
MetricsReport compute_metrics(const ConfusionMatrix& cm, Averaging averaging = Averaging::macro);

/// One row of the method-comparison table.
struct ReportRow {
  std::string model;
  std::string method;
  MetricsReport metrics;
};

/// CSV with header `model,method,Precision,Sensitivity,Specificity,Accuracy,F1`.
std::vector<std::vector<std::string>> metrics_csv(const std::vector<ReportRow>& rows);

/// Fixed-width text block grouped by model, one line per augmentation method,
/// columns Precision, Sensitivity, Specificity, Accuracy, F1 (4 decimals).
std::string metrics_table(const std::vector<ReportRow>& rows);

}  // namespace bronchograde::metrics
