#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <tuple>

namespace oracle {

double rel_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

GradCheck check_gradients(const std::function<Var(Tape&, const std::vector<Var>&)>& build,
                          const std::vector<Tensor>& inputs, double step) {
  auto evaluate = [&](const std::vector<Tensor>& xs) {
    Tape t;
    std::vector<Var> leaves;
    for (const auto& x : xs) leaves.push_back(t.constant(x));
    return static_cast<double>(t.value(build(t, leaves)).item());
  };

  Tape tape;
  std::vector<Var> leaves;
  for (const auto& x : inputs) leaves.push_back(tape.leaf(x));
  tape.backward(build(tape, leaves));

  GradCheck out;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor g = tape.grad(leaves[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const float x0 = xs[k][i];
      auto at = [&](double d) {
        xs[k][i] = static_cast<float>(x0 + d);
        const double v = evaluate(xs);
        xs[k][i] = x0;
        return v;
      };
      const double h = step;
      const double numeric = (8.0 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12.0 * h);
      const double err = rel_error(g[i], numeric);
      if (err > out.max_rel_error) {
        out.max_rel_error = err;
        out.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "] analytic " +
                    std::to_string(g[i]) + " numeric " + std::to_string(numeric);
      }
    }
  }
  return out;
}

namespace {

std::set<std::pair<NodeIndex, NodeIndex>> adjacency(const AttributedGraph& g) {
  std::set<std::pair<NodeIndex, NodeIndex>> adj;
  for (const auto& e : g.edges()) {
    adj.insert({e.src, e.dst});
    adj.insert({e.dst, e.src});
  }
  return adj;
}

double bilinear(std::span<const float> a, const Tensor& w, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j) s += static_cast<double>(a[i]) * w(static_cast<int>(i), static_cast<int>(j)) * b[j];
  return s;
}

}  // namespace

double contrastive_loss(const AttributedGraph& g, const Tensor& h, const std::vector<Tensor>& decoder,
                        const std::vector<PositivePair>& pairs, const std::vector<AdaptiveQueue::Entry>& queue,
                        const AttributedGraph* global, const std::vector<NodeIndex>& to_global) {
  if (pairs.empty()) return 0.0;
  const auto adj = adjacency(g);
  std::set<std::pair<NodeIndex, NodeIndex>> global_adj;
  if (global != nullptr) global_adj = adjacency(*global);
  double total = 0.0;
  for (const auto& p : pairs) {
    const NodeTypeId t = g.types().edge_type(p.type).src_type;
    const Tensor& w = decoder[p.type];
    std::vector<double> s{bilinear(h.row(p.anchor), w, h.row(p.positive))};
    for (NodeIndex k = 0; k < g.num_nodes(); ++k)
      if (g.type_of(k) == t && k != p.anchor && !adj.contains({k, p.anchor}))
        s.push_back(bilinear(h.row(p.anchor), w, h.row(k)));
    for (const auto& e : queue) {
      if (e.type != t) continue;
      if (global != nullptr && e.source >= 0) {
        const NodeIndex a = to_global[p.anchor];
        if (e.source == a || global_adj.contains({e.source, a})) continue;
      }
      s.push_back(bilinear(h.row(p.anchor), w, e.embedding));
    }
    const double m = *std::max_element(s.begin(), s.end());
    double z = 0.0;
    for (double v : s) z += std::exp(v - m);
    total += m + std::log(z) - s[0];
  }
  return total / static_cast<double>(pairs.size());
}

double attribute_loss(const ParameterStore& params, const Tensor& h, const SeparatedGraph& sep,
                      const AttributedGraph& g) {
  double total = 0.0;
  int count = 0;
  for (NodeIndex i = 0; i < sep.num_nodes; ++i) {
    if (sep.attr_slot[i] < 0) continue;
    const std::string base = "dec.attr." + std::to_string(g.type_of(i));
    const Tensor& w1 = params.get(base + ".W1").value;
    const Tensor& b1 = params.get(base + ".b1").value;
    const Tensor& w2 = params.get(base + ".W2").value;
    const Tensor& b2 = params.get(base + ".b2").value;
    const auto hr = h.row(sep.attr_slot[i]);
    std::vector<double> z(w1.cols());
    for (int c = 0; c < w1.cols(); ++c) {
      double s = b1[c];
      for (int r = 0; r < w1.rows(); ++r) s += static_cast<double>(hr[r]) * w1(r, c);
      z[c] = std::tanh(s);
    }
    const auto x = g.attr(i);
    double sq = 0.0;
    for (int c = 0; c < w2.cols(); ++c) {
      double s = b2[c];
      for (int r = 0; r < w2.rows(); ++r) s += z[r] * w2(r, c);
      sq += (s - x[c]) * (s - x[c]);
    }
    total += sq / static_cast<double>(x.size());
    ++count;
  }
  return count == 0 ? 0.0 : total / count;
}

double micro_f1(const std::vector<int>& predicted, const std::vector<int>& truth) {
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(predicted.begin(), predicted.end());
  long tp = 0, fp = 0, fn = 0;
  for (int c : classes)
    for (std::size_t k = 0; k < truth.size(); ++k) {
      tp += predicted[k] == c && truth[k] == c;
      fp += predicted[k] == c && truth[k] != c;
      fn += predicted[k] != c && truth[k] == c;
    }
  return static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
}

double mrr(const std::vector<std::vector<double>>& scores, const std::vector<std::size_t>& truth) {
  double total = 0.0;
  for (std::size_t q = 0; q < scores.size(); ++q) {
    std::vector<std::pair<double, int>> order;
    for (std::size_t k = 0; k < scores[q].size(); ++k)
      order.emplace_back(scores[q][k], k == truth[q] ? 1 : 0);
    // Descending score; among equals the true candidate sorts last.
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    for (std::size_t r = 0; r < order.size(); ++r)
      if (order[r].second == 1) total += 1.0 / static_cast<double>(r + 1);
  }
  return total / static_cast<double>(scores.size());
}

void Fifo::push(const AdaptiveQueue::Entry& e) {
  if (capacity == 0) return;
  items.push_back(e);
  if (items.size() > capacity) items.erase(items.begin());
}

}  // namespace oracle
