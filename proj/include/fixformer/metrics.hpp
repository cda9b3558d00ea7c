#pragma once

#include <vector>

#include "fixformer/tensor.hpp"

namespace fixformer {

// Classification quality summary. confusion[t][p] counts samples of true
// class t predicted as p, so row sums equal class supports.
struct MetricsReport {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double auc = 0.0;
  std::vector<double> precision;  // per class, 0 when undefined
  std::vector<double> recall;
  std::vector<std::vector<std::size_t>> confusion;
};

// Exact AUC of one score column by pairwise comparison: every
// (positive, negative) pair contributes 1 when the positive scores higher,
// 1/2 on a tie. Returns 1/2 when either side is empty (no ranking evidence).
double pairwise_auc(const std::vector<int>& labels, const std::vector<double>& scores,
                    int positive);

// probs holds one post-softmax probability row per sample. Predictions take
// the first maximum. AUC is the positive-class column for two classes and
// the unweighted one-vs-rest mean over classes present in labels otherwise.
MetricsReport compute_metrics(const std::vector<int>& labels, const Tensor& probs);

}  // namespace fixformer
