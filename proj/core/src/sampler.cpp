#include "gptgnn/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gptgnn/errors.hpp"

namespace gptgnn {

void SampleBudget::validate() const {
  if (nodes_per_layer_per_type <= 0) throw ConfigError("nodes_per_layer", "must be positive");
  if (num_layers_sampled <= 0) throw ConfigError("sample_layers", "must be positive");
  if (seed_count <= 0) throw ConfigError("seed_count", "must be positive");
}

namespace {

SampledSubgraph finish(const AttributedGraph& g, const std::vector<NodeIndex>& picked,
                       const std::vector<int>& layer_of_pick) {
  SampledSubgraph out;
  out.sub = induced_subgraph(g, std::span<const NodeIndex>(picked));
  const int n = out.sub.graph.num_nodes();
  out.sampling_layer.assign(n, 0);
  out.draw_rank.assign(n, 0);
  for (std::size_t k = 0; k < picked.size(); ++k) {
    const NodeIndex i = out.sub.old_to_new[picked[k]];
    out.sampling_layer[i] = layer_of_pick[k];
    out.draw_rank[i] = static_cast<int>(k);
  }
  return out;
}

std::vector<NodeIndex> draw_seeds(const AttributedGraph& g, int count, Rng& rng,
                                  std::span<const NodeIndex> pool) {
  std::vector<NodeIndex> candidates(pool.begin(), pool.end());
  if (candidates.empty()) {
    candidates.resize(g.num_nodes());
    std::iota(candidates.begin(), candidates.end(), 0);
  }
  // Partial Fisher-Yates: the first `count` entries are a uniform draw.
  const std::size_t k = std::min<std::size_t>(count, candidates.size());
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  candidates.resize(k);
  return candidates;
}

}  // namespace

SampledSubgraph sample_subgraph(const AttributedGraph& g, const SampleBudget& budget, std::uint64_t seed,
                                std::span<const NodeIndex> seed_pool) {
  budget.validate();
  Rng rng(seed);
  const int nt = g.types().num_node_types();

  std::vector<NodeIndex> picked = draw_seeds(g, budget.seed_count, rng, seed_pool);
  std::vector<int> layer_of_pick(picked.size(), 0);
  std::vector<char> in_set(g.num_nodes(), 0);
  for (NodeIndex s : picked) in_set[s] = 1;

  std::vector<std::vector<std::vector<CandidateProbability>>> probs;
  std::vector<NodeIndex> frontier = picked;
  bool empty_frontier = false;

  for (int layer = 1; layer <= budget.num_layers_sampled; ++layer) {
    // Candidates: unsampled in-neighbors of the frontier, ascending.
    std::vector<NodeIndex> cand;
    for (NodeIndex f : frontier)
      for (const auto& e : g.in_edges(f))
        if (!in_set[e.src]) cand.push_back(e.src);
    std::sort(cand.begin(), cand.end());
    cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
    if (cand.empty()) {
      if (layer == 1) empty_frontier = true;
      break;
    }

    std::vector<std::vector<CandidateProbability>> per_type(nt);
    for (NodeIndex c : cand) {
      int links = 0;
      for (const auto& e : g.in_edges(c)) links += in_set[e.src];
      per_type[g.type_of(c)].push_back({c, static_cast<double>(links) * links});
    }

    frontier.clear();
    for (int t = 0; t < nt; ++t) {
      auto& cs = per_type[t];
      if (cs.empty()) continue;
      double total = 0.0;
      for (const auto& c : cs) total += c.probability;
      for (auto& c : cs) c.probability /= total;

      // Efraimidis-Spirakis keys log(u)/p: the largest `budget` keys form a
      // weighted draw without replacement, in draw order.
      std::vector<std::pair<double, NodeIndex>> keyed;
      keyed.reserve(cs.size());
      for (const auto& c : cs) keyed.emplace_back(std::log(rng.uniform_open()) / c.probability, c.node);
      const std::size_t take = std::min<std::size_t>(budget.nodes_per_layer_per_type, keyed.size());
      std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end(),
                        [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
      for (std::size_t k = 0; k < take; ++k) frontier.push_back(keyed[k].second);
    }
    for (NodeIndex f : frontier) {
      in_set[f] = 1;
      picked.push_back(f);
      layer_of_pick.push_back(layer);
    }
    probs.push_back(std::move(per_type));
  }

  SampledSubgraph out = finish(g, picked, layer_of_pick);
  out.layer_probabilities = std::move(probs);
  out.empty_frontier = empty_frontier;
  return out;
}

SampledSubgraph sample_uniform_nodes(const AttributedGraph& g, const SampledSubgraph& like, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<NodeIndex> picked;
  std::vector<int> layer_of_pick;
  std::vector<char> in_set(g.num_nodes(), 0);
  for (int i = 0; i < like.num_nodes(); ++i)
    if (like.sampling_layer[i] == 0) {
      picked.push_back(like.sub.new_to_old[i]);
      layer_of_pick.push_back(0);
      in_set[picked.back()] = 1;
    }
  for (NodeTypeId t = 0; t < g.types().num_node_types(); ++t) {
    int want = 0;
    for (int i = 0; i < like.num_nodes(); ++i)
      if (like.sampling_layer[i] > 0 && like.graph().type_of(i) == t) ++want;
    std::vector<NodeIndex> pool;
    for (NodeIndex i = g.type_offset(t); i < g.type_offset(t + 1); ++i)
      if (!in_set[i]) pool.push_back(i);
    for (auto x : draw_seeds(g, want, rng, pool)) {
      picked.push_back(x);
      layer_of_pick.push_back(1);
    }
  }
  return finish(g, picked, layer_of_pick);
}

std::string to_string(PermutationMode m) {
  return m == PermutationMode::Uniform ? "uniform" : "sampling-reversed";
}

PermutationMode parse_permutation_mode(const std::string& s) {
  if (s == "uniform") return PermutationMode::Uniform;
  if (s == "sampling-reversed") return PermutationMode::SamplingReversed;
  throw ConfigError("permutation", "expected 'uniform' or 'sampling-reversed', got '" + s + "'");
}

Permutation permutation_from_sampling(const SampledSubgraph& sg, PermutationMode mode, Rng& rng) {
  const int n = sg.num_nodes();
  Permutation p;
  p.order.resize(n);
  std::iota(p.order.begin(), p.order.end(), 0);
  rng.shuffle(p.order);
  if (mode == PermutationMode::SamplingReversed) {
    // The shuffle above randomizes ties; stable sort keeps it.
    std::stable_sort(p.order.begin(), p.order.end(),
                     [&](int a, int b) { return sg.sampling_layer[a] > sg.sampling_layer[b]; });
  }
  p.position.resize(n);
  for (int k = 0; k < n; ++k) p.position[p.order[k]] = k;
  return p;
}

}  // namespace gptgnn
