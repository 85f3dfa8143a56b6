#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace gptgnn {

/// Pooled TP / (TP + (FP + FN) / 2) over all classes. For single-label
/// predictions this is accuracy.
double micro_f1(std::span<const int> predicted, std::span<const int> truth);

/// 1-based rank of scores[true_index]; every other candidate scoring at least
/// as high is ranked before it.
std::size_t pessimistic_rank(std::span<const double> scores, std::size_t true_index);

/// Mean of 1 / pessimistic_rank over queries.
double mrr(const std::vector<std::vector<double>>& scores, std::span<const std::size_t> true_index);

}  // namespace gptgnn
