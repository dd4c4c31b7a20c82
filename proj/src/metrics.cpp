#include "mmfn/metrics.hpp"

#include <cstdio>
#include <iomanip>
#include <sstream>

#include "mmfn/errors.hpp"

namespace mmfn {

namespace {

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

Confusion confusion_from(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size())
    throw DimensionError("confusion: " + std::to_string(predictions.size()) + " predictions for " +
                         std::to_string(labels.size()) + " labels");
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if ((labels[i] != 0 && labels[i] != 1) || (predictions[i] != 0 && predictions[i] != 1))
      throw DataError("confusion: labels and predictions must be 0 or 1");
    if (predictions[i] == 1) (labels[i] == 1 ? c.tp : c.fp)++;
    else (labels[i] == 0 ? c.tn : c.fn)++;
  }
  return c;
}

MetricsReport compute_metrics(const Confusion& c) {
  MetricsReport r;
  r.counts = c;
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

std::string metrics_csv(const MetricsReport& r, std::string_view prefix) {
  std::ostringstream os;
  if (prefix.empty()) os << "metric,value\n";
  const std::string p(prefix);
  os << p << "accuracy," << num(r.accuracy) << '\n'
     << p << "precision," << num(r.precision) << '\n'
     << p << "recall," << num(r.recall) << '\n'
     << p << "f1," << num(r.f1) << '\n'
     << p << "tp," << r.counts.tp << '\n'
     << p << "fp," << r.counts.fp << '\n'
     << p << "tn," << r.counts.tn << '\n'
     << p << "fn," << r.counts.fn << '\n'
     << p << "loss," << num(r.loss) << '\n';
  return os.str();
}

std::string trace_csv(const std::vector<EpochTrace>& trace) {
  std::ostringstream os;
  os << "epoch,loss,l1,l2,sigma1,sigma2,val_accuracy,val_loss\n";
  for (const auto& t : trace)
    os << t.epoch << ',' << num(t.loss) << ',' << num(t.l1) << ',' << num(t.l2) << ',' << num(t.sigma1) << ','
       << num(t.sigma2) << ',' << num(t.val_accuracy) << ',' << num(t.val_loss) << '\n';
  return os.str();
}

std::string metrics_table(const MetricsReport& r, std::string_view title) {
  std::ostringstream os;
  os << title << '\n' << std::fixed << std::setprecision(4);
  os << "  accuracy   " << r.accuracy << '\n';
  os << "  precision  " << r.precision << '\n';
  os << "  recall     " << r.recall << '\n';
  os << "  f1         " << r.f1 << '\n';
  os << "  TP " << r.counts.tp << "  FP " << r.counts.fp << "  TN " << r.counts.tn << "  FN " << r.counts.fn << '\n';
  return os.str();
}

std::vector<LabeledPrediction> parse_predictions_csv(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string line;
  if (!std::getline(is, line) || line.rfind("id,label,prediction", 0) != 0)
    throw DataError("predictions csv must start with 'id,label,prediction'");
  std::vector<LabeledPrediction> rows;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ls(line);
    LabeledPrediction p;
    std::string label, pred;
    if (!std::getline(ls, p.id, ',') || !std::getline(ls, label, ',') || !std::getline(ls, pred, ','))
      throw DataError("predictions csv: short row '" + line + "'");
    if ((label != "0" && label != "1") || (pred != "0" && pred != "1"))
      throw DataError("predictions csv: labels must be 0 or 1 in '" + line + "'");
    p.label = label[0] - '0';
    p.prediction = pred[0] - '0';
    rows.push_back(std::move(p));
  }
  return rows;
}

MetricsReport evaluate_predictions(const std::vector<LabeledPrediction>& rows) {
  std::vector<int> preds, labels;
  for (const auto& r : rows) {
    preds.push_back(r.prediction);
    labels.push_back(r.label);
  }
  return compute_metrics(confusion_from(preds, labels));
}

}  // namespace mmfn
