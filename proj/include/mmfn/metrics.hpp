#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmfn {

// Positive class is fake (1).
struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

Confusion confusion_from(std::span<const int> predictions, std::span<const int> labels);

struct EpochTrace {
  std::size_t epoch = 0;
  double loss = 0, l1 = 0, l2 = 0;
  double sigma1 = 0, sigma2 = 0;
  double val_accuracy = 0, val_loss = 0;
  bool operator==(const EpochTrace&) const = default;
};

struct MetricsReport {
  double accuracy = 0, precision = 0, recall = 0, f1 = 0;
  Confusion counts;
  double loss = 0;  // mean classification loss over the evaluated set, when known
  std::vector<EpochTrace> trace;
  bool operator==(const MetricsReport&) const = default;
};

// 0/0 is taken as 0 for precision, recall and F1.
MetricsReport compute_metrics(const Confusion& c);

// metric,value rows.
std::string metrics_csv(const MetricsReport& r, std::string_view prefix = "");
std::string trace_csv(const std::vector<EpochTrace>& trace);
std::string metrics_table(const MetricsReport& r, std::string_view title);

// id,label,prediction rows with a header line.
struct LabeledPrediction {
  std::string id;
  int label = 0;
  int prediction = 0;
};
std::vector<LabeledPrediction> parse_predictions_csv(std::string_view text);
MetricsReport evaluate_predictions(const std::vector<LabeledPrediction>& rows);

}  // namespace mmfn
