#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gptgnn/graph.hpp"
#include "gptgnn/rng.hpp"

namespace gptgnn {

struct SampleBudget {
  int nodes_per_layer_per_type = 16;
  int num_layers_sampled = 2;
  int seed_count = 8;

  void validate() const;
  bool operator==(const SampleBudget&) const = default;
};

struct CandidateProbability {
  NodeIndex node = 0;  // index in the source graph
  double probability = 0.0;
};

struct SampledSubgraph {
  InducedSubgraph sub;
  // Per subgraph node: the layer that first included it (0 for seeds).
  std::vector<int> sampling_layer;
  // Per subgraph node: position in the overall draw sequence.
  std::vector<int> draw_rank;
  // [layer - 1][node type]: normalized inclusion probabilities over all
  // candidates of that type, before the budget truncation.
  std::vector<std::vector<std::vector<CandidateProbability>>> layer_probabilities;
  // Set when the seeds had no neighbors at all; the result holds only seeds.
  bool empty_frontier = false;

  const AttributedGraph& graph() const { return sub.graph; }
  int num_nodes() const { return sub.graph.num_nodes(); }
};

/// Layer-wise importance sampling of a dense subgraph. Seeds are drawn
/// uniformly from `seed_pool` (all nodes when empty). At each layer the
/// candidates are the unsampled neighbors of the previous layer's nodes; a
/// candidate's weight is the square of its edge count into the sampled set,
/// and up to the budget is drawn per node type without replacement.
SampledSubgraph sample_subgraph(const AttributedGraph& g, const SampleBudget& budget, std::uint64_t seed,
                                std::span<const NodeIndex> seed_pool = {});

/// Same layout, but the non-seed nodes are a uniform draw of the same size
/// and type mix from the whole graph. Baseline for density comparisons.
SampledSubgraph sample_uniform_nodes(const AttributedGraph& g, const SampledSubgraph& like, std::uint64_t seed);

enum class PermutationMode { Uniform, SamplingReversed };

std::string to_string(PermutationMode m);
PermutationMode parse_permutation_mode(const std::string& s);

/// Generation order over subgraph nodes: order[k] is the node generated k-th
/// and position[node] its inverse.
struct Permutation {
  std::vector<int> order;
  std::vector<int> position;
};

/// Uniform: a uniformly random permutation. SamplingReversed: nodes from
/// later sampling layers first, seeds last, ties shuffled.
Permutation permutation_from_sampling(const SampledSubgraph& sg, PermutationMode mode, Rng& rng);

}  // namespace gptgnn
