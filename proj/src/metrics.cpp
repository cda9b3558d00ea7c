#include "fixformer/metrics.hpp"

#include <string>

#include "fixformer/errors.hpp"

namespace fixformer {

double pairwise_auc(const std::vector<int>& labels, const std::vector<double>& scores,
                    int positive) {
  if (labels.size() != scores.size())
    throw ContractError("pairwise_auc: " + std::to_string(labels.size()) +
                        " labels vs " + std::to_string(scores.size()) + " scores");
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != positive) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] == positive) continue;
      ++pairs;
      if (scores[i] > scores[j]) wins += 1.0;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  if (pairs == 0) return 0.5;
  return wins / static_cast<double>(pairs);
}

MetricsReport compute_metrics(const std::vector<int>& labels, const Tensor& probs) {
  if (!probs.is_matrix()) throw ContractError("compute_metrics: probs must be a matrix");
  const std::size_t n = probs.rows();
  const std::size_t c = probs.cols();
  if (labels.size() != n)
    throw ContractError("compute_metrics: " + std::to_string(labels.size()) +
                        " labels vs " + std::to_string(n) + " score rows");
  if (c < 2) throw ContractError("compute_metrics: need at least two classes");
  if (n == 0) throw ContractError("compute_metrics: no samples");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw ContractError("compute_metrics: label " + std::to_string(y) +
                          " outside " + std::to_string(c) + " classes");

  MetricsReport rep;
  rep.confusion.assign(c, std::vector<std::size_t>(c, 0));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t pred = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (probs.at(i, j) > probs.at(i, pred)) pred = j;
    rep.confusion[static_cast<std::size_t>(labels[i])][pred] += 1;
    if (pred == static_cast<std::size_t>(labels[i])) ++correct;
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(n);

  rep.precision.assign(c, 0.0);
  rep.recall.assign(c, 0.0);
  double f1_sum = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t tp = rep.confusion[k][k];
    std::size_t support = 0, predicted = 0;
    for (std::size_t j = 0; j < c; ++j) {
      support += rep.confusion[k][j];
      predicted += rep.confusion[j][k];
    }
    if (predicted > 0)
      rep.precision[k] = static_cast<double>(tp) / static_cast<double>(predicted);
    if (support > 0)
      rep.recall[k] = static_cast<double>(tp) / static_cast<double>(support);
    double denom = rep.precision[k] + rep.recall[k];
    if (denom > 0.0) f1_sum += 2.0 * rep.precision[k] * rep.recall[k] / denom;
  }
  rep.macro_f1 = f1_sum / static_cast<double>(c);

  if (c == 2) {
    std::vector<double> pos(n);
    for (std::size_t i = 0; i < n; ++i) pos[i] = probs.at(i, 1);
    rep.auc = pairwise_auc(labels, pos, 1);
  } else {
    double sum = 0.0;
    std::size_t counted = 0;
    for (std::size_t k = 0; k < c; ++k) {
      std::size_t support = 0;
      for (std::size_t j = 0; j < c; ++j) support += rep.confusion[k][j];
      if (support == 0 || support == n) continue;  // no opposing pairs
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i) col[i] = probs.at(i, k);
      sum += pairwise_auc(labels, col, static_cast<int>(k));
      ++counted;
    }
    rep.auc = counted > 0 ? sum / static_cast<double>(counted) : 0.5;
  }
  return rep;
}

}  // namespace fixformer
