#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "gptgnn/errors.hpp"
#include "gptgnn/graph.hpp"

using namespace gptgnn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("gptgnn_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write(const fs::path& p, const std::string& text) {
  std::ofstream os(p);
  os << text;
}

// A minimal valid bundle; individual tests overwrite one file.
void write_valid_bundle(const GraphFileBundle& b) {
  write(b.schema, "node_type\t0\tpaper\t2\nedge_type\t0\tcites\t0\t0\tsymmetric\n");
  write(b.nodes, "0\t10\t1\t0\t3\n0\t20\t2\t1\t-\n");
  write(b.features, "0\t10\t1,2\n0\t20\t3,4\n");
  write(b.edges, "0\t10\t0\t0\t20\n");
}

}  // namespace

TEST_CASE("directed edge types get a reverse type, symmetric ones are their own reverse") {
  TypeRegistry t;
  const auto a = t.add_node_type("author", 2);
  const auto p = t.add_node_type("paper", 3);
  const auto writes = t.add_edge_type("writes", a, p, false);
  const auto cites = t.add_edge_type("cites", p, p, true);
  CHECK(t.num_edge_types() == 3);
  const auto& w = t.edge_type(writes);
  CHECK(w.reverse == writes + 1);
  CHECK(t.edge_type(w.reverse).name == "rev_writes");
  CHECK(t.edge_type(w.reverse).src_type == p);
  CHECK(t.edge_type(w.reverse).is_reverse);
  CHECK(t.edge_type(cites).reverse == cites);
  CHECK(t.declared_edge_types() == std::vector<EdgeTypeId>{writes, cites});
  CHECK_THROWS_AS(t.add_edge_type("bad", a, p, true), ConsistencyError);
  CHECK_THROWS_AS(t.add_node_type("paper", 1), ConsistencyError);
}

TEST_CASE("builder mirrors edges, merges duplicates and rejects bad edges") {
  TypeRegistry t;
  const auto a = t.add_node_type("author", 1);
  const auto p = t.add_node_type("paper", 1);
  const auto writes = t.add_edge_type("writes", a, p, false);
  GraphBuilder b(t);
  const auto p0 = b.add_node(p, {0.5f});
  const auto a0 = b.add_node(a, {1.0f});
  const auto p1 = b.add_node(p, {0.25f});
  b.add_edge(a0, p0, writes);
  b.add_edge(a0, p0, writes);
  b.add_edge(a0, p1, writes);
  CHECK_THROWS_AS(b.add_edge(p0, a0, writes), ConsistencyError);
  CHECK_THROWS_AS(b.add_edge(a0, NodeRef{p, 7}, writes), UnknownNode);
  CHECK_THROWS_AS(b.add_node(p, {1.0f, 2.0f}), ConsistencyError);
  const auto g = std::move(b).build();

  CHECK(g.num_nodes() == 3);
  CHECK(g.num_edges() == 4);
  // Nodes are grouped by type: the author comes first.
  CHECK(g.index(a0) == 0);
  CHECK(g.index(p0) == 1);
  CHECK(g.attr(g.index(p1))[0] == 0.25f);
  CHECK(g.has_edge(g.index(a0), g.index(p0), writes));
  CHECK(g.has_edge(g.index(p0), g.index(a0), writes + 1));
  CHECK(g.linked(g.index(p1), g.index(a0)));
  CHECK_FALSE(g.linked(g.index(p0), g.index(p1)));
}

TEST_CASE("self-loops are rejected") {
  TypeRegistry t;
  const auto n = t.add_node_type("n", 1);
  const auto e = t.add_edge_type("e", n, n, true);
  GraphBuilder b(t);
  const auto x = b.add_node(n, {1.0f});
  CHECK_THROWS_AS(b.add_edge(x, x, e), ConsistencyError);
}

TEST_CASE("in-edges are sorted and neighbors are deduplicated") {
  Rng rng(4);
  const auto g = fixtures::random_hetero_graph(rng, 15, 5, 0.3, 0.3);
  for (NodeIndex i = 0; i < g.num_nodes(); ++i) {
    const auto in = g.in_edges(i);
    CHECK(std::is_sorted(in.begin(), in.end()));
    std::set<NodeRef> oracle;
    for (const auto& e : g.edges())
      if (e.dst == i) oracle.insert(g.ref(e.src));
    const auto nb = neighbors(g, g.ref(i));
    CHECK(std::vector<NodeRef>(oracle.begin(), oracle.end()) == nb);
  }
}

TEST_CASE("every stored edge has its mirror") {
  Rng rng(5);
  const auto g = fixtures::random_hetero_graph(rng, 20, 6, 0.2, 0.2);
  for (const auto& e : g.edges()) CHECK(g.has_edge(e.dst, e.src, g.types().edge_type(e.type).reverse));
}

TEST_CASE("induced subgraph keeps exactly the edges among kept nodes") {
  Rng rng(6);
  const auto g = fixtures::random_hetero_graph(rng, 20, 6, 0.3, 0.3);
  std::vector<NodeIndex> keep{19, 3, 7, 0, 12, 21, 25};
  const auto sub = induced_subgraph(g, std::span<const NodeIndex>(keep));
  CHECK(sub.graph.num_nodes() == 7);
  CHECK(std::is_sorted(sub.new_to_old.begin(), sub.new_to_old.end()));
  std::size_t expected = 0;
  for (const auto& e : g.edges())
    if (sub.old_to_new[e.src] >= 0 && sub.old_to_new[e.dst] >= 0) {
      ++expected;
      CHECK(sub.graph.has_edge(sub.old_to_new[e.src], sub.old_to_new[e.dst], e.type));
    }
  CHECK(sub.graph.num_edges() == expected);
  for (NodeIndex i = 0; i < sub.graph.num_nodes(); ++i) {
    const auto a = sub.graph.attr(i);
    const auto b = g.attr(sub.new_to_old[i]);
    CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    CHECK(sub.graph.meta(i) == g.meta(sub.new_to_old[i]));
  }
}

TEST_CASE("save then load reproduces the graph and the files") {
  Rng rng(7);
  const auto g = fixtures::random_hetero_graph(rng, 12, 4, 0.3, 0.3);
  TempDir d1("roundtrip1"), d2("roundtrip2");
  const auto b1 = GraphFileBundle::in_directory(d1.path);
  const auto b2 = GraphFileBundle::in_directory(d2.path);
  save_graph(g, b1, {"made by a test"});
  const auto back = load_graph(b1);
  CHECK(back == g);
  save_graph(back, b2, {"made by a test"});
  for (auto [p, q] : {std::pair{b1.schema, b2.schema}, {b1.nodes, b2.nodes}, {b1.edges, b2.edges},
                      {b1.features, b2.features}}) {
    std::ifstream a(p), b(q);
    std::string sa((std::istreambuf_iterator<char>(a)), {}), sb((std::istreambuf_iterator<char>(b)), {});
    CHECK(sa == sb);
    CHECK(sa.rfind("# made by a test\n", 0) == 0);
  }
}

TEST_CASE("sparse file ids are compacted in ascending order") {
  TempDir d("sparse");
  const auto b = GraphFileBundle::in_directory(d.path);
  write_valid_bundle(b);
  const auto g = load_graph(b);
  CHECK(g.num_nodes() == 2);
  CHECK(g.meta(0).time == 1);
  CHECK(g.meta(0).class_label == 3);
  CHECK_FALSE(g.meta(1).class_label.has_value());
  CHECK(g.attr(1)[1] == 4.0f);
  CHECK(g.linked(0, 1));
}

TEST_CASE("malformed files report file and line") {
  TempDir d("malformed");
  const auto b = GraphFileBundle::in_directory(d.path);

  SUBCASE("wrong field count") {
    write_valid_bundle(b);
    write(b.nodes, "# comment\n0\t10\t1\t0\t3\n0\t20\t2\n");
    try {
      load_graph(b);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(e.file() == b.nodes.string());
    }
  }
  SUBCASE("bad float") {
    write_valid_bundle(b);
    write(b.features, "0\t10\t1,x\n0\t20\t3,4\n");
    CHECK_THROWS_AS(load_graph(b), ParseError);
  }
  SUBCASE("dangling endpoint") {
    write_valid_bundle(b);
    write(b.edges, "0\t10\t0\t0\t99\n");
    CHECK_THROWS_AS(load_graph(b), ConsistencyError);
  }
  SUBCASE("dimension mismatch") {
    write_valid_bundle(b);
    write(b.features, "0\t10\t1,2,3\n0\t20\t3,4\n");
    CHECK_THROWS_AS(load_graph(b), ConsistencyError);
  }
  SUBCASE("missing features") {
    write_valid_bundle(b);
    write(b.features, "0\t10\t1,2\n");
    CHECK_THROWS_AS(load_graph(b), ConsistencyError);
  }
  SUBCASE("unknown schema record") {
    write_valid_bundle(b);
    write(b.schema, "vertex\t0\tpaper\t2\n");
    CHECK_THROWS_AS(load_graph(b), ParseError);
  }
}
