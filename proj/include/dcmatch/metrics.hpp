#pragma once

#include <span>
#include <vector>

#include "dcmatch/corpus.hpp"

namespace dcmatch {

struct EvalReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> precision;  // per class
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<std::vector<long>> confusion;  // [gold][predicted]
  long n_examples = 0;

  json to_json() const {
    return {{"accuracy", accuracy}, {"macro_f1", macro_f1}, {"precision", precision}, {"recall", recall},
            {"f1", f1}, {"confusion", confusion}, {"n_examples", n_examples}};
  }
};

// Precision or recall with an empty denominator, and F1 with P + R = 0, count as 0.
inline EvalReport report_from_confusion(std::vector<std::vector<long>> confusion) {
  const std::size_t K = confusion.size();
  EvalReport r;
  r.precision.assign(K, 0.0);
  r.recall.assign(K, 0.0);
  r.f1.assign(K, 0.0);
  long correct = 0;
  std::vector<long> gold_total(K, 0), pred_total(K, 0);
  for (std::size_t g = 0; g < K; ++g) {
    if (confusion[g].size() != K) throw Error("confusion matrix must be square");
    for (std::size_t p = 0; p < K; ++p) {
      gold_total[g] += confusion[g][p];
      pred_total[p] += confusion[g][p];
      r.n_examples += confusion[g][p];
    }
    correct += confusion[g][g];
  }
  if (r.n_examples == 0) throw Error("evaluate: empty dataset");
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.n_examples);
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < K; ++c) {
    const double tp = static_cast<double>(confusion[c][c]);
    if (pred_total[c] > 0) r.precision[c] = tp / static_cast<double>(pred_total[c]);
    if (gold_total[c] > 0) r.recall[c] = tp / static_cast<double>(gold_total[c]);
    const double pr = r.precision[c] + r.recall[c];
    if (pr > 0) r.f1[c] = 2.0 * r.precision[c] * r.recall[c] / pr;
    f1_sum += r.f1[c];
  }
  r.macro_f1 = f1_sum / static_cast<double>(K);
  r.confusion = std::move(confusion);
  return r;
}

inline EvalReport report_from_predictions(std::span<const int> gold, std::span<const int> predicted, int num_classes) {
  if (gold.size() != predicted.size()) throw Error("evaluate: gold/prediction length mismatch");
  std::vector<std::vector<long>> confusion(static_cast<std::size_t>(num_classes),
                                           std::vector<long>(static_cast<std::size_t>(num_classes), 0));
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes)
      throw Error("evaluate: class index out of range");
    ++confusion[static_cast<std::size_t>(gold[i])][static_cast<std::size_t>(predicted[i])];
  }
  return report_from_confusion(std::move(confusion));
}

}  // namespace dcmatch
