#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace gptgnn {

using NodeTypeId = std::int32_t;
using EdgeTypeId = std::int32_t;
// Position of a node in a graph's global ordering (grouped by node type).
using NodeIndex = std::int32_t;

/// Global node reference: node type plus its dense per-type id.
struct NodeRef {
  NodeTypeId type = 0;
  std::int32_t id = 0;

  auto operator<=>(const NodeRef&) const = default;
};

struct NodeTypeInfo {
  std::string name;
  int dim = 0;
};

struct EdgeTypeInfo {
  std::string name;
  NodeTypeId src_type = 0;
  NodeTypeId dst_type = 0;
  bool symmetric = false;
  // For directed types, the id of the materialized reverse type; for
  // symmetric types, the type itself.
  EdgeTypeId reverse = 0;
  // True for the reverse types the registry creates itself.
  bool is_reverse = false;
};

/// Maps dense node/edge type ids to names and shapes. Declaring a directed
/// edge type also registers its reverse so that every stored edge has a
/// mirror for message passing.
class TypeRegistry {
 public:
  NodeTypeId add_node_type(std::string name, int dim);
  EdgeTypeId add_edge_type(std::string name, NodeTypeId src, NodeTypeId dst, bool symmetric);

  int num_node_types() const { return static_cast<int>(node_types_.size()); }
  int num_edge_types() const { return static_cast<int>(edge_types_.size()); }
  const NodeTypeInfo& node_type(NodeTypeId t) const;
  const EdgeTypeInfo& edge_type(EdgeTypeId t) const;
  std::optional<NodeTypeId> find_node_type(const std::string& name) const;
  std::optional<EdgeTypeId> find_edge_type(const std::string& name) const;

  // Edge types as declared by the user, without materialized reverses.
  std::vector<EdgeTypeId> declared_edge_types() const;

  bool operator==(const TypeRegistry&) const;

 private:
  std::vector<NodeTypeInfo> node_types_;
  std::vector<EdgeTypeInfo> edge_types_;
};

struct NodeMeta {
  std::optional<int> time;
  std::optional<int> field;
  std::optional<int> class_label;

  bool operator==(const NodeMeta&) const = default;
};

struct Edge {
  NodeIndex src = 0;
  NodeIndex dst = 0;
  EdgeTypeId type = 0;

  auto operator<=>(const Edge&) const = default;
};

struct InEdge {
  NodeIndex src = 0;
  EdgeTypeId type = 0;

  auto operator<=>(const InEdge&) const = default;
};

class GraphBuilder;

/// Immutable typed graph with dense float attributes. Nodes are ordered by
/// type, then by per-type id; edges are stored in both directions.
class AttributedGraph {
 public:
  AttributedGraph() = default;

  const TypeRegistry& types() const { return types_; }

  int num_nodes() const { return static_cast<int>(meta_.size()); }
  int num_nodes(NodeTypeId t) const { return type_offset_[t + 1] - type_offset_[t]; }
  std::size_t num_edges() const { return edges_.size(); }

  NodeIndex index(NodeRef r) const;
  NodeRef ref(NodeIndex i) const;
  NodeTypeId type_of(NodeIndex i) const { return ref(i).type; }
  bool contains(NodeRef r) const;
  // First global index of type t; nodes of t occupy [offset(t), offset(t+1)).
  NodeIndex type_offset(NodeTypeId t) const { return type_offset_[t]; }

  std::span<const float> attr(NodeIndex i) const;
  const NodeMeta& meta(NodeIndex i) const { return meta_[i]; }

  /// In-edges of node i sorted by (src, type).
  std::span<const InEdge> in_edges(NodeIndex i) const;
  /// All stored edges sorted by (dst, src, type).
  const std::vector<Edge>& edges() const { return edges_; }
  bool has_edge(NodeIndex src, NodeIndex dst, EdgeTypeId type) const;
  /// True if any stored edge goes from src to dst.
  bool linked(NodeIndex src, NodeIndex dst) const;

  bool operator==(const AttributedGraph&) const;

 private:
  friend class GraphBuilder;

  TypeRegistry types_;
  std::vector<NodeIndex> type_offset_{0};
  std::vector<NodeMeta> meta_;
  std::vector<std::vector<float>> attrs_;  // per node type, row-major
  std::vector<Edge> edges_;
  std::vector<std::int64_t> in_offset_{0};
  std::vector<InEdge> in_edges_;
};

/// Single-threaded builder. Nodes of a type get consecutive ids in the order
/// they are added.
class GraphBuilder {
 public:
  explicit GraphBuilder(TypeRegistry types);

  NodeRef add_node(NodeTypeId type, std::vector<float> attr, NodeMeta meta = {});
  /// Adds src->dst of the given type and its mirror (reverse type, or the same
  /// type when symmetric). Duplicates are merged; self-loops are rejected.
  void add_edge(NodeRef src, NodeRef dst, EdgeTypeId type);

  AttributedGraph build() &&;

 private:
  TypeRegistry types_;
  std::vector<std::vector<NodeMeta>> meta_;
  std::vector<std::vector<float>> attrs_;
  std::vector<std::pair<NodeRef, std::pair<NodeRef, EdgeTypeId>>> edges_;
};

/// Stored in-neighbors of a node in ascending order, deduplicated across edge
/// types when no filter is given.
std::vector<NodeRef> neighbors(const AttributedGraph& g, NodeRef node,
                               std::optional<EdgeTypeId> edge_type = std::nullopt);

struct InducedSubgraph {
  AttributedGraph graph;
  std::vector<NodeIndex> new_to_old;
  std::vector<NodeIndex> old_to_new;  // -1 for nodes outside the subgraph
};

/// Subgraph on `nodes` keeping every edge with both endpoints inside. New
/// indices follow ascending old index.
InducedSubgraph induced_subgraph(const AttributedGraph& g, std::span<const NodeIndex> nodes);
InducedSubgraph induced_subgraph(const AttributedGraph& g, std::span<const NodeRef> nodes);

// ---------------------------------------------------------------------------
// Files

struct GraphFileBundle {
  std::filesystem::path schema;
  std::filesystem::path nodes;
  std::filesystem::path edges;
  std::filesystem::path features;

  /// The conventional file names inside one directory.
  static GraphFileBundle in_directory(const std::filesystem::path& dir);
};

AttributedGraph load_graph(const GraphFileBundle& bundle);

/// Writes canonical files: sorted rows, shortest round-trip float text, and
/// each undirected or reverse-materialized edge written once. `header` lines
/// are emitted as `# ` comments at the top of every file.
void save_graph(const AttributedGraph& g, const GraphFileBundle& bundle,
                const std::vector<std::string>& header = {});

}  // namespace gptgnn
