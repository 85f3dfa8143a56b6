#include "gptgnn/layers.hpp"

#include <algorithm>
#include <cmath>

#include "gptgnn/errors.hpp"

namespace gptgnn {

std::string to_string(LayerKind k) { return k == LayerKind::Mean ? "mean" : "typed-attention"; }

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "mean") return LayerKind::Mean;
  if (s == "typed-attention") return LayerKind::TypedAttention;
  throw ConfigError("layer_kind", "expected 'mean' or 'typed-attention', got '" + s + "'");
}

void LayerConfig::validate() const {
  if (hidden_dim <= 0) throw ConfigError("hidden_dim", "must be positive");
  if (num_heads <= 0) throw ConfigError("num_heads", "must be positive");
  if (hidden_dim % num_heads != 0) throw ConfigError("num_heads", "must divide hidden_dim");
  if (num_layers < 1) throw ConfigError("num_layers", "must be at least 1");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("dropout", "must be in [0, 1)");
}

MessageGraph MessageGraph::from_graph(const AttributedGraph& g) {
  MessageGraph mg;
  mg.num_slots = g.num_nodes();
  mg.slot_type.resize(g.num_nodes());
  for (NodeIndex i = 0; i < g.num_nodes(); ++i) mg.slot_type[i] = g.type_of(i);
  mg.edges.reserve(g.num_edges());
  for (const auto& e : g.edges()) mg.edges.push_back({e.src, e.dst, e.type});
  return mg;
}

std::vector<TypedInput> graph_inputs(Tape& tape, const AttributedGraph& g) {
  std::vector<TypedInput> out;
  for (NodeTypeId t = 0; t < g.types().num_node_types(); ++t) {
    const int n = g.num_nodes(t);
    if (n == 0) continue;
    const int d = g.types().node_type(t).dim;
    Tensor x = Tensor::matrix(n, d);
    Index slots(n);
    for (int k = 0; k < n; ++k) {
      const NodeIndex i = g.type_offset(t) + k;
      std::copy_n(g.attr(i).data(), d, x.row(k).data());
      slots[k] = i;
    }
    out.push_back({t, tape.constant(std::move(x)), std::move(slots)});
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string in_name(NodeTypeId t) { return "gnn.in." + std::to_string(t); }
std::string edge_name(int layer, EdgeTypeId r) {
  return "gnn.l" + std::to_string(layer) + ".e" + std::to_string(r);
}

// Message edges regrouped by type so each edge type's map is applied once.
struct CompiledEdges {
  std::vector<MessageEdge> edges;        // grouped by type, stable within a type
  std::vector<EdgeTypeId> types;         // distinct types present, ascending
  std::vector<Index> src, dst;           // per present type
  Index all_dst;
  std::vector<float> inv_indegree;
};

CompiledEdges compile(const MessageGraph& mg, EdgeTypeId self_type, bool self_messages, int num_types) {
  CompiledEdges c;
  std::vector<std::vector<MessageEdge>> by_type(num_types);
  for (const auto& e : mg.edges) {
    if (e.src < 0 || e.src >= mg.num_slots || e.dst < 0 || e.dst >= mg.num_slots)
      throw ShapeError("message edge references slot outside [0, " + std::to_string(mg.num_slots) + ")");
    if (e.type < 0 || e.type >= self_type)
      throw ShapeError("message edge has unknown edge type " + std::to_string(e.type));
    by_type[e.type].push_back(e);
  }
  if (self_messages)
    for (std::int32_t s = 0; s < mg.num_slots; ++s) by_type[self_type].push_back({s, s, self_type});

  std::vector<int> indeg(mg.num_slots, 0);
  for (EdgeTypeId r = 0; r < num_types; ++r) {
    if (by_type[r].empty()) continue;
    c.types.push_back(r);
    Index s, d;
    for (const auto& e : by_type[r]) {
      c.edges.push_back(e);
      s.push_back(e.src);
      d.push_back(e.dst);
      c.all_dst.push_back(e.dst);
      ++indeg[e.dst];
    }
    c.src.push_back(std::move(s));
    c.dst.push_back(std::move(d));
  }
  c.inv_indegree.resize(mg.num_slots);
  for (int s = 0; s < mg.num_slots; ++s) {
    if (indeg[s] == 0) throw EmptyNeighborhood("slot " + std::to_string(s) + " receives no messages");
    c.inv_indegree[s] = 1.0f / static_cast<float>(indeg[s]);
  }
  return c;
}

// x[idx] * W, choosing the cheaper of gather-then-multiply and
// multiply-then-gather. Both are row-wise, so results for one row never
// depend on other rows.
Var gathered_map(Tape& t, Var h, Var w, const Index& idx) {
  if (static_cast<int>(idx.size()) >= t.value(h).rows())
    return ops::row_gather(t, ops::matmul(t, h, w), idx);
  return ops::matmul(t, ops::row_gather(t, h, idx), w);
}

Var dropout(Tape& t, Var x, float rate, Rng& rng) {
  if (rate <= 0.0f) return x;
  Tensor mask(t.value(x).shape());
  const float keep = 1.0f - rate;
  for (auto& m : mask.values()) m = rng.uniform() < keep ? 1.0f / keep : 0.0f;
  return ops::mul(t, x, t.constant(std::move(mask)));
}

}  // namespace

GnnEncoder::GnnEncoder(LayerConfig cfg, const TypeRegistry& types)
    : cfg_(cfg), self_type_(types.num_edge_types()) {
  cfg_.validate();
  for (NodeTypeId t = 0; t < types.num_node_types(); ++t) input_dims_.push_back(types.node_type(t).dim);
}

void GnnEncoder::init_params(ParameterStore& params, Rng& rng) const {
  const int d = cfg_.hidden_dim;
  for (std::size_t t = 0; t < input_dims_.size(); ++t) {
    params.add(in_name(static_cast<NodeTypeId>(t)) + ".W", input_dims_[t], d, Init::Glorot, &rng);
    params.add(in_name(static_cast<NodeTypeId>(t)) + ".b", 1, d, Init::Zeros);
  }
  for (int l = 0; l < cfg_.num_layers; ++l)
    for (EdgeTypeId r = 0; r < num_message_types(); ++r) {
      if (cfg_.kind == LayerKind::Mean) {
        params.add(edge_name(l, r) + ".W", d, d, Init::Glorot, &rng);
      } else {
        for (const char* m : {".K", ".Q", ".V"}) params.add(edge_name(l, r) + m, d, d, Init::Glorot, &rng);
      }
    }
}

void GnnEncoder::init_identity(ParameterStore& params) const {
  const int d = cfg_.hidden_dim;
  for (std::size_t t = 0; t < input_dims_.size(); ++t) {
    params.add(in_name(static_cast<NodeTypeId>(t)) + ".W", input_dims_[t], d, Init::Identity);
    params.add(in_name(static_cast<NodeTypeId>(t)) + ".b", 1, d, Init::Zeros);
  }
  for (int l = 0; l < cfg_.num_layers; ++l)
    for (EdgeTypeId r = 0; r < num_message_types(); ++r) {
      if (cfg_.kind == LayerKind::Mean) {
        params.add(edge_name(l, r) + ".W", d, d, Init::Identity);
      } else {
        for (const char* m : {".K", ".Q", ".V"}) params.add(edge_name(l, r) + m, d, d, Init::Identity);
      }
    }
}

Var GnnEncoder::encode(Tape& tape, ParameterStore& params, const MessageGraph& mg,
                       std::span<const TypedInput> inputs, const EncodeOptions& opt,
                       EncodeTrace* trace) const {
  const int n = mg.num_slots;
  const int d = cfg_.hidden_dim;
  if (static_cast<int>(mg.slot_type.size()) != n) throw ShapeError("slot_type length differs from num_slots");
  if (opt.training && cfg_.dropout > 0.0f && opt.dropout_rng == nullptr)
    throw Error("training-mode encode needs a dropout rng");

  // Input projection, scattered into slot order.
  std::vector<Var> projected;
  Index slot_of_row;
  std::vector<int> seen(n, 0);
  for (const auto& in : inputs) {
    const Tensor& x = tape.value(in.features);
    if (in.type < 0 || in.type >= static_cast<int>(input_dims_.size()))
      throw ShapeError("input for unknown node type " + std::to_string(in.type));
    if (x.cols() != input_dims_[in.type] || x.rows() != static_cast<int>(in.slots.size()))
      throw ShapeError("input of node type " + std::to_string(in.type) + " has shape " + shape_string(x.shape()));
    for (auto s : in.slots) {
      if (s < 0 || s >= n || mg.slot_type[s] != in.type) throw ShapeError("input row mapped to a mismatched slot");
      ++seen[s];
    }
    if (in.slots.empty()) continue;
    const Var w = tape.param(params.get(in_name(in.type) + ".W"));
    const Var b = tape.param(params.get(in_name(in.type) + ".b"));
    projected.push_back(ops::add_row(tape, ops::matmul(tape, in.features, w), b));
    slot_of_row.insert(slot_of_row.end(), in.slots.begin(), in.slots.end());
  }
  for (int s = 0; s < n; ++s)
    if (seen[s] != 1) throw ShapeError("slot " + std::to_string(s) + " has " + std::to_string(seen[s]) + " inputs");
  Var h = ops::row_scatter_add(tape, ops::concat_rows(tape, projected), std::move(slot_of_row), n);

  const CompiledEdges c = compile(mg, self_type_, opt.self_messages, num_message_types());
  if (trace != nullptr) {
    trace->edges = c.edges;
    trace->attention.clear();
  }
  const bool drop = opt.training && cfg_.dropout > 0.0f;
  const int heads = cfg_.num_heads;

  for (int l = 0; l < cfg_.num_layers; ++l) {
    Var agg;
    if (cfg_.kind == LayerKind::Mean) {
      std::vector<Var> msgs;
      for (std::size_t k = 0; k < c.types.size(); ++k) {
        const Var w = tape.param(params.get(edge_name(l, c.types[k]) + ".W"));
        msgs.push_back(gathered_map(tape, h, w, c.src[k]));
      }
      agg = ops::scale_rows(tape, ops::row_scatter_add(tape, ops::concat_rows(tape, msgs), c.all_dst, n),
                            c.inv_indegree);
    } else {
      std::vector<Var> qs, ks, vs;
      for (std::size_t k = 0; k < c.types.size(); ++k) {
        const std::string base = edge_name(l, c.types[k]);
        qs.push_back(gathered_map(tape, h, tape.param(params.get(base + ".Q")), c.dst[k]));
        ks.push_back(gathered_map(tape, h, tape.param(params.get(base + ".K")), c.src[k]));
        vs.push_back(gathered_map(tape, h, tape.param(params.get(base + ".V")), c.src[k]));
      }
      const Var q = ops::concat_rows(tape, qs);
      const Var key = ops::concat_rows(tape, ks);
      const Var v = ops::concat_rows(tape, vs);
      const float inv_sqrt = 1.0f / std::sqrt(static_cast<float>(d / heads));
      const Var scores = ops::scale(tape, ops::head_dot(tape, q, key, heads), inv_sqrt);
      Var alpha = ops::segment_softmax(tape, scores, c.all_dst, n);
      if (trace != nullptr) trace->attention.push_back(tape.value(alpha));
      if (drop) alpha = dropout(tape, alpha, cfg_.dropout, *opt.dropout_rng);
      agg = ops::row_scatter_add(tape, ops::head_scale(tape, v, alpha, heads), c.all_dst, n);
    }
    h = ops::tanh(tape, ops::scale(tape, ops::add(tape, agg, h), 0.5f));
    if (drop && l + 1 < cfg_.num_layers) h = dropout(tape, h, cfg_.dropout, *opt.dropout_rng);
  }
  return h;
}

std::pair<std::vector<MessageEdge>, Tensor> GnnEncoder::attention_weights(
    ParameterStore& params, const MessageGraph& mg, std::span<const TypedInput> inputs, Tape& tape,
    std::int32_t dst_slot, int layer) const {
  if (cfg_.kind != LayerKind::TypedAttention) throw NotAttentionLayer("encoder uses mean aggregation");
  if (layer < 0 || layer >= cfg_.num_layers) throw ShapeError("no layer " + std::to_string(layer));
  if (dst_slot < 0 || dst_slot >= mg.num_slots) throw ShapeError("no slot " + std::to_string(dst_slot));
  EncodeTrace trace;
  encode(tape, params, mg, inputs, {}, &trace);
  const Tensor& a = trace.attention[layer];
  std::vector<MessageEdge> edges;
  std::vector<float> rows;
  for (std::size_t k = 0; k < trace.edges.size(); ++k) {
    if (trace.edges[k].dst != dst_slot) continue;
    edges.push_back(trace.edges[k]);
    const auto r = a.row(static_cast<int>(k));
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return {edges, Tensor::matrix(static_cast<int>(edges.size()), cfg_.num_heads, std::move(rows))};
}

}  // namespace gptgnn
