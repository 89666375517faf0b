#include "h2o/metrics.hpp"

#include <sstream>

namespace h2o {

ConfusionCounts count_confusion(const std::vector<int>& predictions,
                                const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw ValidationError("confusion: " + std::to_string(predictions.size()) +
                          " predictions vs " + std::to_string(labels.size()) + " labels");
  if (predictions.empty()) throw ValidationError("confusion: empty prediction set");
  ConfusionCounts c;
  c.total = predictions.size();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1))
      throw ValidationError("confusion: labels must be 0 or 1 (index " + std::to_string(i) + ")");
    if (p == y) {
      ++c.tp[static_cast<std::size_t>(y)];
    } else {
      ++c.fp[static_cast<std::size_t>(p)];
      ++c.fn[static_cast<std::size_t>(y)];
    }
  }
  return c;
}

namespace {

double f1_from(double tp, double fp, double fn) {
  const double denom_p = tp + fp, denom_r = tp + fn;
  if (denom_p == 0.0 || denom_r == 0.0) return 0.0;
  const double p = tp / denom_p, r = tp / denom_r;
  if (p + r == 0.0) return 0.0;
  return 2.0 * p * r / (p + r);
}

}  // namespace

MetricsReport metrics_from_confusion(const ConfusionCounts& c) {
  MetricsReport m;
  m.confusion = c;
  const double n = static_cast<double>(c.total);
  const double tp_sum = static_cast<double>(c.tp[0] + c.tp[1]);
  const double fp_sum = static_cast<double>(c.fp[0] + c.fp[1]);
  const double fn_sum = static_cast<double>(c.fn[0] + c.fn[1]);
  m.accuracy = tp_sum / n;
  m.f1_micro = f1_from(tp_sum, fp_sum, fn_sum);
  m.f1_positive = f1_from(static_cast<double>(c.tp[1]), static_cast<double>(c.fp[1]),
                          static_cast<double>(c.fn[1]));
  const double f1_neg = f1_from(static_cast<double>(c.tp[0]), static_cast<double>(c.fp[0]),
                                static_cast<double>(c.fn[0]));
  m.f1_macro = 0.5 * (m.f1_positive + f1_neg);
  return m;
}

MetricsReport compute_metrics(const std::vector<int>& predictions,
                              const std::vector<int>& labels) {
  return metrics_from_confusion(count_confusion(predictions, labels));
}

std::string MetricsReport::to_json() const {
  std::ostringstream os;
  os.precision(17);
  os << "{\"accuracy\":" << accuracy << ",\"f1_micro\":" << f1_micro
     << ",\"f1_positive\":" << f1_positive << ",\"f1_macro\":" << f1_macro
     << ",\"confusion\":{\"tp\":[" << confusion.tp[0] << "," << confusion.tp[1] << "],\"fp\":["
     << confusion.fp[0] << "," << confusion.fp[1] << "],\"fn\":[" << confusion.fn[0] << ","
     << confusion.fn[1] << "],\"total\":" << confusion.total << "}}";
  return os.str();
}

const std::vector<ReferenceResult>& reported_reference_results() {
  static const std::vector<ReferenceResult> results = {
      {"iMiGUE", 0.7000, 0.7222},
      {"SMG", 0.7544, 0.7647},
  };
  return results;
}

}  // namespace h2o
