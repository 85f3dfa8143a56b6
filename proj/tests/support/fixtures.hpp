#pragma once

#include <cstdint>
#include <vector>

#include "gptgnn/graph.hpp"
#include "gptgnn/layers.hpp"
#include "gptgnn/pretrain.hpp"
#include "gptgnn/rng.hpp"
#include "gptgnn/sampler.hpp"

namespace fixtures {

using namespace gptgnn;

/// Two node types ("paper" dim 4, "author" dim 3), a symmetric paper-paper
/// type and a directed author->paper type. Edges are independent draws.
AttributedGraph random_hetero_graph(Rng& rng, int papers, int authors, double p_cite, double p_write,
                                    bool with_meta = true);

/// One node type, a symmetric edge type, attributes of dimension `dim`.
AttributedGraph random_homo_graph(Rng& rng, int nodes, int dim, double p);

Tensor random_matrix(Rng& rng, int rows, int cols, double scale = 1.0);

/// A sampled subgraph plus everything needed for one pre-training forward.
struct PretrainFixture {
  AttributedGraph graph;
  SampledSubgraph sg;
  Permutation pi;
  MaskPlan plan;
};

PretrainFixture random_pretrain_fixture(std::uint64_t seed, bool hetero = true);

/// Copy of `g` with node `node`'s attribute replaced.
AttributedGraph with_attribute(const AttributedGraph& g, NodeIndex node, std::vector<float> attr);

LayerConfig small_layer(LayerKind kind = LayerKind::TypedAttention);

}  // namespace fixtures
