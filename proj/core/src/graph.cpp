#include "gptgnn/graph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

#include "gptgnn/errors.hpp"

namespace gptgnn {

// ---------------------------------------------------------------------------
// TypeRegistry

NodeTypeId TypeRegistry::add_node_type(std::string name, int dim) {
  if (dim <= 0) throw ConsistencyError("node type '" + name + "' needs a positive dimension");
  if (find_node_type(name)) throw ConsistencyError("duplicate node type '" + name + "'");
  node_types_.push_back({std::move(name), dim});
  return static_cast<NodeTypeId>(node_types_.size() - 1);
}

EdgeTypeId TypeRegistry::add_edge_type(std::string name, NodeTypeId src, NodeTypeId dst,
                                       bool symmetric) {
  if (src < 0 || src >= num_node_types() || dst < 0 || dst >= num_node_types())
    throw ConsistencyError("edge type '" + name + "' references an unknown node type");
  if (symmetric && src != dst)
    throw ConsistencyError("symmetric edge type '" + name + "' must connect one node type");
  if (find_edge_type(name)) throw ConsistencyError("duplicate edge type '" + name + "'");
  const auto id = static_cast<EdgeTypeId>(edge_types_.size());
  if (symmetric) {
    edge_types_.push_back({std::move(name), src, dst, true, id, false});
  } else {
    std::string rev = "rev_" + name;
    edge_types_.push_back({std::move(name), src, dst, false, id + 1, false});
    edge_types_.push_back({std::move(rev), dst, src, false, id, true});
  }
  return id;
}

const NodeTypeInfo& TypeRegistry::node_type(NodeTypeId t) const {
  if (t < 0 || t >= num_node_types()) throw ConsistencyError("unknown node type " + std::to_string(t));
  return node_types_[t];
}

const EdgeTypeInfo& TypeRegistry::edge_type(EdgeTypeId t) const {
  if (t < 0 || t >= num_edge_types()) throw ConsistencyError("unknown edge type " + std::to_string(t));
  return edge_types_[t];
}

std::optional<NodeTypeId> TypeRegistry::find_node_type(const std::string& name) const {
  for (std::size_t i = 0; i < node_types_.size(); ++i)
    if (node_types_[i].name == name) return static_cast<NodeTypeId>(i);
  return std::nullopt;
}

std::optional<EdgeTypeId> TypeRegistry::find_edge_type(const std::string& name) const {
  for (std::size_t i = 0; i < edge_types_.size(); ++i)
    if (edge_types_[i].name == name) return static_cast<EdgeTypeId>(i);
  return std::nullopt;
}

std::vector<EdgeTypeId> TypeRegistry::declared_edge_types() const {
  std::vector<EdgeTypeId> out;
  for (std::size_t i = 0; i < edge_types_.size(); ++i)
    if (!edge_types_[i].is_reverse) out.push_back(static_cast<EdgeTypeId>(i));
  return out;
}

bool TypeRegistry::operator==(const TypeRegistry& o) const {
  if (node_types_.size() != o.node_types_.size() || edge_types_.size() != o.edge_types_.size())
    return false;
  for (std::size_t i = 0; i < node_types_.size(); ++i)
    if (node_types_[i].name != o.node_types_[i].name || node_types_[i].dim != o.node_types_[i].dim)
      return false;
  for (std::size_t i = 0; i < edge_types_.size(); ++i) {
    const auto& a = edge_types_[i];
    const auto& b = o.edge_types_[i];
    if (a.name != b.name || a.src_type != b.src_type || a.dst_type != b.dst_type ||
        a.symmetric != b.symmetric || a.reverse != b.reverse || a.is_reverse != b.is_reverse)
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// AttributedGraph

NodeIndex AttributedGraph::index(NodeRef r) const {
  if (!contains(r))
    throw UnknownNode("unknown node (" + std::to_string(r.type) + ", " + std::to_string(r.id) + ")");
  return type_offset_[r.type] + r.id;
}

NodeRef AttributedGraph::ref(NodeIndex i) const {
  if (i < 0 || i >= num_nodes()) throw UnknownNode("unknown node index " + std::to_string(i));
  const auto it = std::upper_bound(type_offset_.begin(), type_offset_.end(), i);
  const auto t = static_cast<NodeTypeId>(it - type_offset_.begin() - 1);
  return {t, i - type_offset_[t]};
}

bool AttributedGraph::contains(NodeRef r) const {
  return r.type >= 0 && r.type < types_.num_node_types() && r.id >= 0 && r.id < num_nodes(r.type);
}

std::span<const float> AttributedGraph::attr(NodeIndex i) const {
  const NodeRef r = ref(i);
  const auto dim = static_cast<std::size_t>(types_.node_type(r.type).dim);
  return {attrs_[r.type].data() + static_cast<std::size_t>(r.id) * dim, dim};
}

std::span<const InEdge> AttributedGraph::in_edges(NodeIndex i) const {
  if (i < 0 || i >= num_nodes()) throw UnknownNode("unknown node index " + std::to_string(i));
  return {in_edges_.data() + in_offset_[i], static_cast<std::size_t>(in_offset_[i + 1] - in_offset_[i])};
}

bool AttributedGraph::has_edge(NodeIndex src, NodeIndex dst, EdgeTypeId type) const {
  const auto in = in_edges(dst);
  return std::binary_search(in.begin(), in.end(), InEdge{src, type});
}

bool AttributedGraph::linked(NodeIndex src, NodeIndex dst) const {
  const auto in = in_edges(dst);
  const auto it = std::lower_bound(in.begin(), in.end(), InEdge{src, 0});
  return it != in.end() && it->src == src;
}

bool AttributedGraph::operator==(const AttributedGraph& o) const {
  return types_ == o.types_ && type_offset_ == o.type_offset_ && meta_ == o.meta_ &&
         attrs_ == o.attrs_ && edges_ == o.edges_;
}

// ---------------------------------------------------------------------------
// GraphBuilder

GraphBuilder::GraphBuilder(TypeRegistry types)
    : types_(std::move(types)),
      meta_(types_.num_node_types()),
      attrs_(types_.num_node_types()) {}

NodeRef GraphBuilder::add_node(NodeTypeId type, std::vector<float> attr, NodeMeta meta) {
  const auto& info = types_.node_type(type);
  if (static_cast<int>(attr.size()) != info.dim)
    throw ConsistencyError("node of type '" + info.name + "' has feature dimension " +
                           std::to_string(attr.size()) + ", expected " + std::to_string(info.dim));
  meta_[type].push_back(meta);
  attrs_[type].insert(attrs_[type].end(), attr.begin(), attr.end());
  return {type, static_cast<std::int32_t>(meta_[type].size() - 1)};
}

void GraphBuilder::add_edge(NodeRef src, NodeRef dst, EdgeTypeId type) {
  const auto& info = types_.edge_type(type);
  auto known = [&](NodeRef r) {
    return r.type >= 0 && r.type < types_.num_node_types() && r.id >= 0 &&
           r.id < static_cast<std::int32_t>(meta_[r.type].size());
  };
  if (!known(src) || !known(dst)) throw UnknownNode("edge '" + info.name + "' has a dangling endpoint");
  if (src.type != info.src_type || dst.type != info.dst_type)
    throw ConsistencyError("edge '" + info.name + "' connects the wrong node types");
  if (src == dst) throw ConsistencyError("self-loop on edge type '" + info.name + "'");
  edges_.push_back({src, {dst, type}});
  edges_.push_back({dst, {src, info.reverse}});
}

AttributedGraph GraphBuilder::build() && {
  AttributedGraph g;
  g.types_ = std::move(types_);
  const int nt = g.types_.num_node_types();
  g.type_offset_.assign(nt + 1, 0);
  for (int t = 0; t < nt; ++t)
    g.type_offset_[t + 1] = g.type_offset_[t] + static_cast<NodeIndex>(meta_[t].size());
  for (int t = 0; t < nt; ++t) g.meta_.insert(g.meta_.end(), meta_[t].begin(), meta_[t].end());
  g.attrs_ = std::move(attrs_);

  g.edges_.reserve(edges_.size());
  for (const auto& [s, rest] : edges_)
    g.edges_.push_back({g.type_offset_[s.type] + s.id, g.type_offset_[rest.first.type] + rest.first.id,
                        rest.second});
  std::sort(g.edges_.begin(), g.edges_.end(), [](const Edge& a, const Edge& b) {
    return std::tie(a.dst, a.src, a.type) < std::tie(b.dst, b.src, b.type);
  });
  g.edges_.erase(std::unique(g.edges_.begin(), g.edges_.end()), g.edges_.end());

  const int n = g.num_nodes();
  g.in_offset_.assign(n + 1, 0);
  for (const auto& e : g.edges_) ++g.in_offset_[e.dst + 1];
  for (int i = 0; i < n; ++i) g.in_offset_[i + 1] += g.in_offset_[i];
  g.in_edges_.reserve(g.edges_.size());
  for (const auto& e : g.edges_) g.in_edges_.push_back({e.src, e.type});
  return g;
}

// ---------------------------------------------------------------------------
// Queries

std::vector<NodeRef> neighbors(const AttributedGraph& g, NodeRef node,
                               std::optional<EdgeTypeId> edge_type) {
  const NodeIndex i = g.index(node);
  std::vector<NodeRef> out;
  NodeIndex last = -1;
  for (const auto& e : g.in_edges(i)) {
    if (edge_type && e.type != *edge_type) continue;
    if (e.src == last) continue;
    out.push_back(g.ref(e.src));
    last = e.src;
  }
  return out;
}

InducedSubgraph induced_subgraph(const AttributedGraph& g, std::span<const NodeIndex> nodes) {
  InducedSubgraph out;
  out.old_to_new.assign(g.num_nodes(), -1);
  std::vector<NodeIndex> sorted(nodes.begin(), nodes.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (NodeIndex i : sorted)
    if (i < 0 || i >= g.num_nodes()) throw UnknownNode("unknown node index " + std::to_string(i));

  GraphBuilder b(g.types());
  for (NodeIndex old : sorted) {
    const NodeRef r = g.ref(old);
    const auto a = g.attr(old);
    b.add_node(r.type, std::vector<float>(a.begin(), a.end()), g.meta(old));
    out.old_to_new[old] = static_cast<NodeIndex>(out.new_to_old.size());
    out.new_to_old.push_back(old);
  }
  // Rebuilding from global indices: new index maps to (type, id) through the
  // per-type counters, which follow the same ascending order.
  std::vector<NodeRef> new_ref(sorted.size());
  {
    std::vector<std::int32_t> next(g.types().num_node_types(), 0);
    for (std::size_t k = 0; k < sorted.size(); ++k) {
      const auto t = g.type_of(sorted[k]);
      new_ref[k] = {t, next[t]++};
    }
  }
  for (NodeIndex old : sorted) {
    for (const auto& e : g.in_edges(old)) {
      const NodeIndex s = out.old_to_new[e.src];
      if (s < 0) continue;
      const auto& info = g.types().edge_type(e.type);
      // Each pair is added once from its canonical direction; the builder
      // materializes the mirror.
      if (info.is_reverse) continue;
      if (info.symmetric && e.src > old) continue;
      b.add_edge(new_ref[s], new_ref[out.old_to_new[old]], e.type);
    }
  }
  out.graph = std::move(b).build();
  return out;
}

InducedSubgraph induced_subgraph(const AttributedGraph& g, std::span<const NodeRef> nodes) {
  std::vector<NodeIndex> idx;
  idx.reserve(nodes.size());
  for (const auto& r : nodes) idx.push_back(g.index(r));
  return induced_subgraph(g, std::span<const NodeIndex>(idx));
}

// ---------------------------------------------------------------------------
// Files

GraphFileBundle GraphFileBundle::in_directory(const std::filesystem::path& dir) {
  return {dir / "schema.tsv", dir / "nodes.tsv", dir / "edges.tsv", dir / "features.tsv"};
}

namespace {

struct LineReader {
  std::ifstream in;
  std::string file;
  std::size_t line_no = 0;

  explicit LineReader(const std::filesystem::path& p) : in(p), file(p.string()) {
    if (!in) throw DataError("cannot open " + file);
  }

  // Next non-empty, non-comment line split on tabs.
  bool next(std::vector<std::string>& fields) {
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty() || line[0] == '#') continue;
      fields.clear();
      std::size_t start = 0;
      for (;;) {
        const auto tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      return true;
    }
    return false;
  }

  [[noreturn]] void fail(const std::string& what) const { throw ParseError(file, line_no, what); }

  void expect_fields(const std::vector<std::string>& f, std::size_t n) const {
    if (f.size() != n)
      fail("expected " + std::to_string(n) + " fields, got " + std::to_string(f.size()));
  }

  int to_int(const std::string& s) const {
    int v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail("not an integer: '" + s + "'");
    return v;
  }

  std::optional<int> to_opt_int(const std::string& s) const {
    if (s == "-") return std::nullopt;
    return to_int(s);
  }

  std::vector<float> to_floats(const std::string& s) const {
    std::vector<float> out;
    const char* p = s.data();
    const char* end = s.data() + s.size();
    while (p < end) {
      float v = 0.0f;
      const auto [q, ec] = std::from_chars(p, end, v);
      if (ec != std::errc()) fail("not a float list: '" + s + "'");
      out.push_back(v);
      p = q;
      if (p < end) {
        if (*p != ',') fail("expected ',' in float list");
        ++p;
        if (p == end) fail("trailing ',' in float list");
      }
    }
    return out;
  }
};

std::string format_float(float v) {
  char buf[32];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

std::string format_opt(const std::optional<int>& v) { return v ? std::to_string(*v) : "-"; }

void write_header(std::ostream& os, const std::vector<std::string>& header) {
  for (const auto& h : header) os << "# " << h << '\n';
}

}  // namespace

AttributedGraph load_graph(const GraphFileBundle& bundle) {
  TypeRegistry types;
  std::vector<EdgeTypeId> file_edge_type;  // file id -> registry id
  {
    LineReader r(bundle.schema);
    std::vector<std::string> f;
    while (r.next(f)) {
      if (f[0] == "node_type") {
        r.expect_fields(f, 4);
        if (r.to_int(f[1]) != types.num_node_types()) r.fail("node type ids must be dense and ordered");
        try {
          types.add_node_type(f[2], r.to_int(f[3]));
        } catch (const ConsistencyError& e) {
          r.fail(e.what());
        }
      } else if (f[0] == "edge_type") {
        r.expect_fields(f, 6);
        if (r.to_int(f[1]) != static_cast<int>(file_edge_type.size()))
          r.fail("edge type ids must be dense and ordered");
        if (f[5] != "symmetric" && f[5] != "directed") r.fail("expected 'symmetric' or 'directed'");
        try {
          file_edge_type.push_back(
              types.add_edge_type(f[2], r.to_int(f[3]), r.to_int(f[4]), f[5] == "symmetric"));
        } catch (const ConsistencyError& e) {
          r.fail(e.what());
        }
      } else {
        r.fail("unknown schema record '" + f[0] + "'");
      }
    }
  }

  // Node ids in files may be sparse; they are compacted by ascending order.
  const int nt = types.num_node_types();
  std::vector<std::map<int, NodeMeta>> nodes(nt);
  {
    LineReader r(bundle.nodes);
    std::vector<std::string> f;
    while (r.next(f)) {
      r.expect_fields(f, 5);
      const int t = r.to_int(f[0]);
      if (t < 0 || t >= nt) r.fail("unknown node type " + f[0]);
      const int id = r.to_int(f[1]);
      if (id < 0) r.fail("negative node id");
      NodeMeta m{r.to_opt_int(f[2]), r.to_opt_int(f[3]), r.to_opt_int(f[4])};
      if (!nodes[t].emplace(id, m).second) r.fail("duplicate node (" + f[0] + ", " + f[1] + ")");
    }
  }
  std::vector<std::map<int, std::int32_t>> compact(nt);
  for (int t = 0; t < nt; ++t) {
    std::int32_t next = 0;
    for (const auto& [id, m] : nodes[t]) compact[t][id] = next++;
  }

  std::vector<std::vector<std::optional<std::vector<float>>>> feats(nt);
  for (int t = 0; t < nt; ++t) feats[t].resize(nodes[t].size());
  {
    LineReader r(bundle.features);
    std::vector<std::string> f;
    while (r.next(f)) {
      r.expect_fields(f, 3);
      const int t = r.to_int(f[0]);
      if (t < 0 || t >= nt) r.fail("unknown node type " + f[0]);
      const int id = r.to_int(f[1]);
      const auto it = compact[t].find(id);
      if (it == compact[t].end())
        throw ConsistencyError(r.file + ":" + std::to_string(r.line_no) + ": features for unknown node (" +
                               f[0] + ", " + f[1] + ")");
      auto v = r.to_floats(f[2]);
      if (static_cast<int>(v.size()) != types.node_type(t).dim)
        throw ConsistencyError(r.file + ":" + std::to_string(r.line_no) + ": feature dimension " +
                               std::to_string(v.size()) + ", expected " +
                               std::to_string(types.node_type(t).dim));
      auto& slot = feats[t][it->second];
      if (slot) r.fail("duplicate features for node (" + f[0] + ", " + f[1] + ")");
      slot = std::move(v);
    }
  }

  GraphBuilder b(types);
  for (int t = 0; t < nt; ++t) {
    std::int32_t local = 0;
    for (const auto& [id, m] : nodes[t]) {
      if (!feats[t][local])
        throw ConsistencyError("node (" + std::to_string(t) + ", " + std::to_string(id) +
                               ") has no features");
      b.add_node(t, std::move(*feats[t][local]), m);
      ++local;
    }
  }

  {
    LineReader r(bundle.edges);
    std::vector<std::string> f;
    while (r.next(f)) {
      r.expect_fields(f, 5);
      const int et = r.to_int(f[2]);
      if (et < 0 || et >= static_cast<int>(file_edge_type.size())) r.fail("unknown edge type " + f[2]);
      auto resolve = [&](const std::string& ts, const std::string& is) -> NodeRef {
        const int t = r.to_int(ts);
        const int id = r.to_int(is);
        if (t < 0 || t >= nt || !compact[t].contains(id))
          throw ConsistencyError(r.file + ":" + std::to_string(r.line_no) + ": dangling endpoint (" + ts +
                                 ", " + is + ")");
        return {t, compact[t].at(id)};
      };
      const NodeRef s = resolve(f[0], f[1]);
      const NodeRef d = resolve(f[3], f[4]);
      try {
        b.add_edge(s, d, file_edge_type[et]);
      } catch (const ConsistencyError& e) {
        throw ConsistencyError(r.file + ":" + std::to_string(r.line_no) + ": " + e.what());
      }
    }
  }
  return std::move(b).build();
}

void save_graph(const AttributedGraph& g, const GraphFileBundle& bundle,
                const std::vector<std::string>& header) {
  const auto& types = g.types();
  const auto declared = types.declared_edge_types();
  auto open = [](const std::filesystem::path& p) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw DataError("cannot write " + p.string());
    return os;
  };

  {
    auto os = open(bundle.schema);
    write_header(os, header);
    for (int t = 0; t < types.num_node_types(); ++t)
      os << "node_type\t" << t << '\t' << types.node_type(t).name << '\t' << types.node_type(t).dim << '\n';
    for (std::size_t k = 0; k < declared.size(); ++k) {
      const auto& e = types.edge_type(declared[k]);
      os << "edge_type\t" << k << '\t' << e.name << '\t' << e.src_type << '\t' << e.dst_type << '\t'
         << (e.symmetric ? "symmetric" : "directed") << '\n';
    }
  }
  {
    auto os = open(bundle.nodes);
    write_header(os, header);
    for (NodeIndex i = 0; i < g.num_nodes(); ++i) {
      const auto r = g.ref(i);
      const auto& m = g.meta(i);
      os << r.type << '\t' << r.id << '\t' << format_opt(m.time) << '\t' << format_opt(m.field) << '\t'
         << format_opt(m.class_label) << '\n';
    }
  }
  {
    auto os = open(bundle.features);
    write_header(os, header);
    for (NodeIndex i = 0; i < g.num_nodes(); ++i) {
      const auto r = g.ref(i);
      os << r.type << '\t' << r.id << '\t';
      const auto a = g.attr(i);
      for (std::size_t k = 0; k < a.size(); ++k) os << (k ? "," : "") << format_float(a[k]);
      os << '\n';
    }
  }
  {
    std::vector<std::tuple<int, NodeIndex, NodeIndex>> rows;
    for (const auto& e : g.edges()) {
      const auto& info = types.edge_type(e.type);
      if (info.is_reverse) continue;
      if (info.symmetric && e.src > e.dst) continue;
      const auto k = std::find(declared.begin(), declared.end(), e.type) - declared.begin();
      rows.emplace_back(static_cast<int>(k), e.src, e.dst);
    }
    std::sort(rows.begin(), rows.end());
    auto os = open(bundle.edges);
    write_header(os, header);
    for (const auto& [k, s, d] : rows) {
      const auto rs = g.ref(s);
      const auto rd = g.ref(d);
      os << rs.type << '\t' << rs.id << '\t' << k << '\t' << rd.type << '\t' << rd.id << '\n';
    }
  }
}

}  // namespace gptgnn
