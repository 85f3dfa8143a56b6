#include "fixtures.hpp"

namespace fixtures {

AttributedGraph random_hetero_graph(Rng& rng, int papers, int authors, double p_cite, double p_write,
                                    bool with_meta) {
  TypeRegistry types;
  const auto paper = types.add_node_type("paper", 4);
  const auto author = types.add_node_type("author", 3);
  const auto cites = types.add_edge_type("cites", paper, paper, true);
  const auto writes = types.add_edge_type("writes", author, paper, false);
  GraphBuilder b(types);
  std::vector<NodeRef> ps, as;
  for (int i = 0; i < papers; ++i) {
    std::vector<float> x(4);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    NodeMeta m;
    if (with_meta) {
      m.time = static_cast<int>(rng.below(5));
      m.field = static_cast<int>(rng.below(3));
      m.class_label = static_cast<int>(rng.below(4));
    }
    ps.push_back(b.add_node(paper, x, m));
  }
  for (int i = 0; i < authors; ++i) {
    std::vector<float> x(3);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    as.push_back(b.add_node(author, x));
  }
  for (int i = 0; i < papers; ++i)
    for (int j = i + 1; j < papers; ++j)
      if (rng.bernoulli(p_cite)) b.add_edge(ps[i], ps[j], cites);
  for (int a = 0; a < authors; ++a)
    for (int i = 0; i < papers; ++i)
      if (rng.bernoulli(p_write)) b.add_edge(as[a], ps[i], writes);
  return std::move(b).build();
}

AttributedGraph random_homo_graph(Rng& rng, int nodes, int dim, double p) {
  TypeRegistry types;
  const auto t = types.add_node_type("node", dim);
  const auto e = types.add_edge_type("link", t, t, true);
  GraphBuilder b(types);
  std::vector<NodeRef> ns;
  for (int i = 0; i < nodes; ++i) {
    std::vector<float> x(dim);
    for (auto& v : x) v = static_cast<float>(rng.normal());
    ns.push_back(b.add_node(t, x));
  }
  for (int i = 0; i < nodes; ++i)
    for (int j = i + 1; j < nodes; ++j)
      if (rng.bernoulli(p)) b.add_edge(ns[i], ns[j], e);
  return std::move(b).build();
}

Tensor random_matrix(Rng& rng, int rows, int cols, double scale) {
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = static_cast<float>(scale * rng.normal());
  return t;
}

PretrainFixture random_pretrain_fixture(std::uint64_t seed, bool hetero) {
  Rng rng(seed);
  PretrainFixture f;
  const int papers = 12 + static_cast<int>(rng.below(12));
  f.graph = hetero ? random_hetero_graph(rng, papers, 4 + static_cast<int>(rng.below(6)), 0.25, 0.3)
                   : random_homo_graph(rng, papers, 4, 0.25);
  SampleBudget budget;
  budget.nodes_per_layer_per_type = 4;
  budget.num_layers_sampled = 2;
  budget.seed_count = 3;
  f.sg = sample_subgraph(f.graph, budget, rng.next_u64());
  f.pi = permutation_from_sampling(f.sg, rng.bernoulli(0.5) ? PermutationMode::Uniform
                                                           : PermutationMode::SamplingReversed, rng);
  MaskConfig mc;
  mc.attr_target_ratio = 0.5;
  f.plan = build_mask_plan(f.sg, f.pi, mc, rng);
  return f;
}

AttributedGraph with_attribute(const AttributedGraph& g, NodeIndex node, std::vector<float> attr) {
  GraphBuilder b(g.types());
  for (NodeIndex i = 0; i < g.num_nodes(); ++i) {
    const auto a = g.attr(i);
    b.add_node(g.type_of(i), i == node ? attr : std::vector<float>(a.begin(), a.end()), g.meta(i));
  }
  for (const auto& e : g.edges())
    if (!g.types().edge_type(e.type).is_reverse) b.add_edge(g.ref(e.src), g.ref(e.dst), e.type);
  return std::move(b).build();
}

LayerConfig small_layer(LayerKind kind) {
  LayerConfig c;
  c.hidden_dim = 8;
  c.num_heads = 2;
  c.num_layers = 2;
  c.kind = kind;
  c.dropout = 0.0f;
  return c;
}

}  // namespace fixtures
