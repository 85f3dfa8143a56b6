#include <algorithm>
#include <map>

#include "doctest.h"
#include "fixtures.hpp"
#include "gptgnn/errors.hpp"
#include "gptgnn/sampler.hpp"
#include "stats.hpp"

using namespace gptgnn;

namespace {

TypeRegistry one_type() {
  TypeRegistry types;
  const auto t = types.add_node_type("node", 2);
  types.add_edge_type("link", t, t, true);
  return types;
}

// Nodes 0..n-1 with the listed undirected edges.
AttributedGraph undirected(int n, const std::vector<std::pair<int, int>>& edges) {
  GraphBuilder b(one_type());
  std::vector<NodeRef> refs;
  for (int i = 0; i < n; ++i) refs.push_back(b.add_node(0, {static_cast<float>(i), 1.0f}));
  for (auto [u, v] : edges) b.add_edge(refs[u], refs[v], 0);
  return std::move(b).build();
}

AttributedGraph complete(int n) {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) e.emplace_back(i, j);
  return undirected(n, e);
}

SampleBudget budget(int per_layer, int layers, int seeds) {
  SampleBudget b;
  b.nodes_per_layer_per_type = per_layer;
  b.num_layers_sampled = layers;
  b.seed_count = seeds;
  return b;
}

std::size_t internal_edges(const SampledSubgraph& sg) { return sg.graph().num_edges(); }

}  // namespace

TEST_CASE("budget validation") {
  CHECK_THROWS_AS(budget(0, 1, 1).validate(), ConfigError);
  CHECK_THROWS_AS(budget(1, 0, 1).validate(), ConfigError);
  CHECK_THROWS_AS(budget(1, 1, 0).validate(), ConfigError);
}

TEST_CASE("a large enough budget saturates K5") {
  const auto g = complete(5);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto sg = sample_subgraph(g, budget(5, 1, 1), seed);
    CHECK(sg.num_nodes() == 5);
    CHECK(sg.graph().num_edges() == g.num_edges());
  }
}

TEST_CASE("leaves of a star are included uniformly") {
  const int leaves = 6;
  std::vector<std::pair<int, int>> e;
  for (int i = 1; i <= leaves; ++i) e.emplace_back(0, i);
  const auto g = undirected(leaves + 1, e);
  const std::vector<NodeIndex> hub{0};
  std::vector<double> counts(leaves, 0.0);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto sg = sample_subgraph(g, budget(2, 1, 1), seed, hub);
    REQUIRE(sg.num_nodes() == 3);
    CHECK(sg.sub.new_to_old[0] == 0);
    for (int i = 1; i < 3; ++i) counts[sg.sub.new_to_old[i] - 1] += 1.0;
  }
  CHECK(stats::chi_square_uniform_p(counts) > 0.01);
}

TEST_CASE("samples stay inside the seed's component") {
  std::vector<std::pair<int, int>> e;
  for (int i = 0; i < 5; ++i)
    for (int j = i + 1; j < 5; ++j) {
      e.emplace_back(i, j);
      e.emplace_back(i + 5, j + 5);
    }
  const auto g = undirected(10, e);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const std::vector<NodeIndex> pool{static_cast<NodeIndex>(seed % 5)};
    const auto sg = sample_subgraph(g, budget(3, 3, 1), seed, pool);
    for (NodeIndex old : sg.sub.new_to_old) CHECK(old < 5);
  }
}

TEST_CASE("an isolated seed yields a flagged seeds-only subgraph") {
  const auto g = undirected(3, {{1, 2}});
  const std::vector<NodeIndex> pool{0};
  const auto sg = sample_subgraph(g, budget(4, 2, 1), 3, pool);
  CHECK(sg.empty_frontier);
  CHECK(sg.num_nodes() == 1);
  CHECK(sg.sub.new_to_old[0] == 0);
}

TEST_CASE("sample structure invariants") {
  Rng rng(31);
  const auto g = fixtures::random_hetero_graph(rng, 80, 40, 0.05, 0.05);
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto b = budget(5, 3, 4);
    const auto sg = sample_subgraph(g, b, seed);

    for (const auto& layer : sg.layer_probabilities)
      for (const auto& per_type : layer) {
        if (per_type.empty()) continue;
        double total = 0.0;
        for (const auto& c : per_type) {
          CHECK(c.probability >= 0.0);
          total += c.probability;
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      }

    // Per layer and type at most the budget; seeds are layer 0.
    std::map<std::pair<int, int>, int> per_layer_type;
    int seeds = 0;
    for (int i = 0; i < sg.num_nodes(); ++i) {
      if (sg.sampling_layer[i] == 0) ++seeds;
      else ++per_layer_type[{sg.sampling_layer[i], sg.graph().type_of(i)}];
    }
    CHECK(seeds == b.seed_count);
    for (const auto& [key, count] : per_layer_type) CHECK(count <= b.nodes_per_layer_per_type);

    // Draw ranks are a permutation consistent with the layers.
    std::vector<int> by_rank(sg.num_nodes());
    for (int i = 0; i < sg.num_nodes(); ++i) by_rank[sg.draw_rank[i]] = i;
    for (int k = 1; k < sg.num_nodes(); ++k)
      CHECK(sg.sampling_layer[by_rank[k - 1]] <= sg.sampling_layer[by_rank[k]]);

    // Every non-seed node is adjacent to some node of the previous layer.
    for (int i = 0; i < sg.num_nodes(); ++i) {
      if (sg.sampling_layer[i] == 0) continue;
      bool adjacent = false;
      for (const auto& e : sg.graph().in_edges(i)) adjacent |= sg.sampling_layer[e.src] == sg.sampling_layer[i] - 1;
      CHECK(adjacent);
    }
  }
}

TEST_CASE("sampling is deterministic under a fixed seed") {
  Rng rng(37);
  const auto g = fixtures::random_hetero_graph(rng, 60, 30, 0.08, 0.05);
  const auto a = sample_subgraph(g, budget(4, 2, 3), 99);
  const auto b = sample_subgraph(g, budget(4, 2, 3), 99);
  CHECK(a.sub.new_to_old == b.sub.new_to_old);
  CHECK(a.sampling_layer == b.sampling_layer);
  CHECK(a.draw_rank == b.draw_rank);
  CHECK(a.graph() == b.graph());
}

TEST_CASE("importance samples are denser than uniform node samples") {
  Rng rng(41);
  const auto g = fixtures::random_homo_graph(rng, 400, 4, 0.01);
  double dense = 0.0, uniform = 0.0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto sg = sample_subgraph(g, budget(8, 2, 4), seed);
    const auto us = sample_uniform_nodes(g, sg, seed + 1000);
    CHECK(us.num_nodes() == sg.num_nodes());
    dense += static_cast<double>(internal_edges(sg));
    uniform += static_cast<double>(internal_edges(us));
  }
  CHECK(dense >= uniform);
}

TEST_CASE("permutations") {
  SUBCASE("one node") {
    const auto g = undirected(1, {});
    const auto sg = sample_subgraph(g, budget(1, 1, 1), 1);
    Rng rng(1);
    const auto pi = permutation_from_sampling(sg, PermutationMode::Uniform, rng);
    CHECK(pi.order == std::vector<int>{0});
    CHECK(pi.position == std::vector<int>{0});
  }

  SUBCASE("uniform over three nodes") {
    const auto g = complete(3);
    const auto sg = sample_subgraph(g, budget(1, 1, 3), 1);
    REQUIRE(sg.num_nodes() == 3);
    std::map<std::vector<int>, double> freq;
    Rng rng(2);
    for (int k = 0; k < 6000; ++k) freq[permutation_from_sampling(sg, PermutationMode::Uniform, rng).order] += 1.0;
    REQUIRE(freq.size() == 6);
    std::vector<double> counts;
    for (const auto& [p, c] : freq) counts.push_back(c);
    CHECK(stats::chi_square_uniform_p(counts) > 0.01);
  }

  SUBCASE("sampling-reversed puts seeds last") {
    Rng g_rng(43);
    const auto g = fixtures::random_homo_graph(g_rng, 100, 3, 0.05);
    Rng rng(3);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto sg = sample_subgraph(g, budget(5, 2, 3), seed);
      const auto pi = permutation_from_sampling(sg, PermutationMode::SamplingReversed, rng);
      const int n = sg.num_nodes();
      for (int k = 1; k < n; ++k) CHECK(sg.sampling_layer[pi.order[k - 1]] >= sg.sampling_layer[pi.order[k]]);
      for (int k = n - 3; k < n; ++k) CHECK(sg.sampling_layer[pi.order[k]] == 0);
      for (int i = 0; i < n; ++i) CHECK(pi.order[pi.position[i]] == i);
    }
  }

  SUBCASE("mode names") {
    CHECK(parse_permutation_mode(to_string(PermutationMode::Uniform)) == PermutationMode::Uniform);
    CHECK(parse_permutation_mode(to_string(PermutationMode::SamplingReversed)) == PermutationMode::SamplingReversed);
    CHECK_THROWS_AS(parse_permutation_mode("reversed"), ConfigError);
  }
}
