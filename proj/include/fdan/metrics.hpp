#pragma once

// Emotion-recognition scores from a confusion matrix (rows = truth,
// columns = prediction): WAR, UAR and support-weighted F1.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fdan/error.hpp"
#include "json.hpp"

namespace fdan {

struct MetricsReport {
  std::vector<std::vector<std::size_t>> confusion;
  double war = 0.0;
  double uar = 0.0;
  double w_f1 = 0.0;
  /// Zero for classes without support.
  std::vector<double> per_class_recall;
  std::size_t samples = 0;
};

/// WAR is support-weighted recall (plain accuracy), UAR averages recall over
/// classes that occur in `truth`, w-F1 weights per-class F1 by support.
inline MetricsReport metrics(std::span<const std::size_t> predicted,
                             std::span<const std::size_t> truth, std::size_t classes) {
  if (predicted.size() != truth.size()) {
    throw InputError("metrics: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(truth.size()) + " labels");
  }
  if (truth.empty()) throw InputError("metrics: no samples");
  if (classes == 0) throw InputError("metrics: zero classes");
  MetricsReport r;
  r.samples = truth.size();
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || predicted[i] >= classes) {
      throw InputError("metrics: class index out of range at sample " + std::to_string(i));
    }
    ++r.confusion[truth[i]][predicted[i]];
  }

  const double n = static_cast<double>(truth.size());
  std::size_t correct = 0;
  std::size_t supported = 0;
  double recall_sum = 0.0;
  r.per_class_recall.assign(classes, 0.0);
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t support = 0;
    std::size_t predicted_as = 0;
    for (std::size_t k = 0; k < classes; ++k) {
      support += r.confusion[c][k];
      predicted_as += r.confusion[k][c];
    }
    const std::size_t tp = r.confusion[c][c];
    correct += tp;
    if (support == 0) continue;
    ++supported;
    const double recall = static_cast<double>(tp) / static_cast<double>(support);
    const double precision =
        predicted_as == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(predicted_as);
    const double f1 =
        precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    r.per_class_recall[c] = recall;
    recall_sum += recall;
    r.w_f1 += static_cast<double>(support) / n * f1;
  }
  r.war = static_cast<double>(correct) / n;
  r.uar = recall_sum / static_cast<double>(supported);
  return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
  return nlohmann::json{{"samples", r.samples},
                        {"war", r.war},
                        {"uar", r.uar},
                        {"w_f1", r.w_f1},
                        {"per_class_recall", r.per_class_recall},
                        {"confusion", r.confusion}};
}

}  // namespace fdan
