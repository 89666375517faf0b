#pragma once

#include <array>
#include <string>
#include <vector>

#include "h2o/errors.hpp"

namespace h2o {

// Per-class confusion bookkeeping for the binary emotion labels {0,1}.
struct ConfusionCounts {
  std::array<std::size_t, 2> tp{0, 0};
  std::array<std::size_t, 2> fp{0, 0};
  std::array<std::size_t, 2> fn{0, 0};
  std::size_t total = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double l_rec = 0.0;
  double l_cls = 0.0;
  double l_total = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double val_f1_micro = 0.0;
  double val_f1_positive = 0.0;
  double val_f1_macro = 0.0;
  double lr = 0.0;
};

struct MetricsReport {
  ConfusionCounts confusion;
  double accuracy = 0.0;
  double f1_micro = 0.0;     // micro-averaged over both classes
  double f1_positive = 0.0;  // positive class only
  double f1_macro = 0.0;     // unweighted mean of per-class F1
  std::vector<EpochRecord> curve;

  std::string to_json() const;
};

ConfusionCounts count_confusion(const std::vector<int>& predictions,
                                const std::vector<int>& labels);
MetricsReport compute_metrics(const std::vector<int>& predictions, const std::vector<int>& labels);
MetricsReport metrics_from_confusion(const ConfusionCounts& c);

// Published results on the access-restricted iMiGUE and SMG datasets, kept as
// reference metadata only; nothing in this project reproduces them because
// the datasets cannot be redistributed.
struct ReferenceResult {
  std::string dataset;
  double accuracy;
  double f1;
};
const std::vector<ReferenceResult>& reported_reference_results();

}  // namespace h2o
