#include "bronchograde/metrics.hpp"

#include <cstdio>
#include <numeric>

#include "bronchograde/errors.hpp"
#include "bronchograde/log.hpp"

namespace bronchograde::metrics {

namespace {

double ratio(std::uint64_t num, std::uint64_t den, int cls, const char* what) {
  if (den == 0) {
    log::warn("metrics: ", what, " undefined for class ", cls + 1, " (zero denominator); reported as 0");
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(int k) : k_(k) {
  if (k < 1) throw ValidationError("confusion matrix needs at least one class");
  counts_.assign(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0);
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t t = 0;
  for (int i = 0; i < k_; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& true_labels,
                                 const std::vector<int>& predicted_labels, int k) {
  if (true_labels.size() != predicted_labels.size()) {
    throw ValidationError("label sequences differ in length");
  }
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < true_labels.size(); ++i) {
    const int t = true_labels[i];
    const int p = predicted_labels[i];
    if (t < 1 || t > k || p < 1 || p > k) {
      throw ValidationError("label out of range [1, " + std::to_string(k) + "] at position " +
                            std::to_string(i));
    }
    ++cm.at(t - 1, p - 1);
  }
  return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm, Averaging averaging) {
  const auto total = cm.total();
  if (total == 0) throw PreconditionError("compute_metrics: empty confusion matrix");
  const int k = cm.classes();

  MetricsReport rep;
  rep.averaging = averaging;
  rep.per_class.resize(static_cast<std::size_t>(k));
  std::uint64_t sum_tp = 0, sum_fp = 0, sum_fn = 0, sum_tn = 0;
  for (int c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (int j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    ClassMetrics m;
    m.tp = cm.at(c, c);
    m.fn = row - m.tp;
    m.fp = col - m.tp;
    m.tn = total - m.tp - m.fn - m.fp;
    m.precision = ratio(m.tp, m.tp + m.fp, c, "precision");
    m.sensitivity = ratio(m.tp, m.tp + m.fn, c, "sensitivity");
    m.specificity = ratio(m.tn, m.tn + m.fp, c, "specificity");
    m.f1 = (m.precision + m.sensitivity) > 0.0
               ? 2.0 * m.precision * m.sensitivity / (m.precision + m.sensitivity)
               : 0.0;
    sum_tp += m.tp;
    sum_fp += m.fp;
    sum_fn += m.fn;
    sum_tn += m.tn;
    rep.per_class[static_cast<std::size_t>(c)] = m;
  }

  rep.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);

  switch (averaging) {
    case Averaging::macro: {
      for (const auto& m : rep.per_class) {
        rep.precision += m.precision;
        rep.sensitivity += m.sensitivity;
        rep.specificity += m.specificity;
        rep.f1 += m.f1;
      }
      rep.precision /= k;
      rep.sensitivity /= k;
      rep.specificity /= k;
      rep.f1 /= k;
      break;
    }
    case Averaging::weighted: {
      for (const auto& m : rep.per_class) {
        const double w = static_cast<double>(m.tp + m.fn) / static_cast<double>(total);
        rep.precision += w * m.precision;
        rep.sensitivity += w * m.sensitivity;
        rep.specificity += w * m.specificity;
        rep.f1 += w * m.f1;
      }
      break;
    }
    case Averaging::micro: {
      rep.precision = ratio(sum_tp, sum_tp + sum_fp, -1, "micro precision");
      rep.sensitivity = ratio(sum_tp, sum_tp + sum_fn, -1, "micro sensitivity");
      rep.specificity = ratio(sum_tn, sum_tn + sum_fp, -1, "micro specificity");
      rep.f1 = (rep.precision + rep.sensitivity) > 0.0
                   ? 2.0 * rep.precision * rep.sensitivity / (rep.precision + rep.sensitivity)
                   : 0.0;
      break;
    }
  }
  return rep;
}

std::vector<std::vector<std::string>> metrics_csv(const std::vector<ReportRow>& rows) {
  std::vector<std::vector<std::string>> out = {
      {"model", "method", "Precision", "Sensitivity", "Specificity", "Accuracy", "F1"}};
  for (const auto& r : rows) {
    out.push_back({r.model, r.method, fixed4(r.metrics.precision), fixed4(r.metrics.sensitivity),
                   fixed4(r.metrics.specificity), fixed4(r.metrics.accuracy), fixed4(r.metrics.f1)});
  }
  return out;
}

std::string metrics_table(const std::vector<ReportRow>& rows) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-22s %11s %11s %11s %11s %11s\n", "Augmentation method",
                "Precision", "Sensitivity", "Specificity", "Accuracy", "F1");
  out += line;
  std::string current_model;
  for (const auto& r : rows) {
    if (r.model != current_model) {
      current_model = r.model;
      out += current_model + "\n";
    }
    std::snprintf(line, sizeof line, "%-22s %11.4f %11.4f %11.4f %11.4f %11.4f\n", r.method.c_str(),
                  r.metrics.precision, r.metrics.sensitivity, r.metrics.specificity,
                  r.metrics.accuracy, r.metrics.f1);
    out += line;
  }
  return out;
}

}  // namespace bronchograde::metrics
