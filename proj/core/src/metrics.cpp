#include "gptgnn/metrics.hpp"

#include <map>

#include "gptgnn/errors.hpp"

namespace gptgnn {

double micro_f1(std::span<const int> predicted, std::span<const int> truth) {
  if (truth.empty()) throw EmptyEval("micro-F1 over an empty evaluation set");
  if (predicted.size() != truth.size()) throw ShapeError("prediction and label counts differ");
  // Per class counts pooled over classes: a wrong prediction is one false
  // positive for the predicted class and one false negative for the true one.
  std::map<int, long> tp, fp, fn;
  for (std::size_t k = 0; k < truth.size(); ++k) {
    if (predicted[k] == truth[k]) {
      ++tp[truth[k]];
    } else {
      ++fp[predicted[k]];
      ++fn[truth[k]];
    }
  }
  long TP = 0, FP = 0, FN = 0;
  for (const auto& [c, n] : tp) TP += n;
  for (const auto& [c, n] : fp) FP += n;
  for (const auto& [c, n] : fn) FN += n;
  return static_cast<double>(TP) / (static_cast<double>(TP) + 0.5 * static_cast<double>(FP + FN));
}

std::size_t pessimistic_rank(std::span<const double> scores, std::size_t true_index) {
  if (true_index >= scores.size()) throw ShapeError("true candidate index out of range");
  const double s = scores[true_index];
  std::size_t rank = 1;
  for (std::size_t k = 0; k < scores.size(); ++k)
    if (k != true_index && !(scores[k] < s)) ++rank;
  return rank;
}

double mrr(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> true_index) {
  if (scores.empty()) throw EmptyEval("MRR over an empty query set");
  if (scores.size() != true_index.size()) throw ShapeError("one true index per query required");
  double sum = 0.0;
  for (std::size_t q = 0; q < scores.size(); ++q)
    sum += 1.0 / static_cast<double>(pessimistic_rank(scores[q], true_index[q]));
  return sum / static_cast<double>(scores.size());
}

}  // namespace gptgnn
