#include "gptgnn/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "gptgnn/errors.hpp"

namespace gptgnn {

int MaskPlan::num_attr_targets() const {
  return static_cast<int>(std::count(attr_target.begin(), attr_target.end(), 1));
}

std::size_t MaskPlan::num_masked() const {
  std::size_t n = 0;
  for (const auto& m : masked) n += m.size();
  return n;
}

void MaskConfig::validate() const {
  if (!(edge_mask_ratio > 0.0 && edge_mask_ratio < 1.0)) throw ConfigError("edge_mask_ratio", "must be in (0, 1)");
  if (!(attr_target_ratio > 0.0 && attr_target_ratio <= 1.0))
    throw ConfigError("attr_target_ratio", "must be in (0, 1]");
}

namespace {

// Stored edges into node i from nodes earlier in the order, ascending.
std::vector<PlanEdge> earlier_edges(const AttributedGraph& g, const Permutation& pi, std::int32_t i) {
  std::vector<PlanEdge> out;
  for (const auto& e : g.in_edges(i))
    if (pi.position[e.src] < pi.position[i]) out.push_back({e.src, i, e.type});
  return out;
}

bool attr_maskable(const MaskConfig& cfg, NodeTypeId t) {
  return cfg.attr_types.empty() || std::find(cfg.attr_types.begin(), cfg.attr_types.end(), t) != cfg.attr_types.end();
}

}  // namespace

MaskPlan build_mask_plan(const SampledSubgraph& sg, const Permutation& pi, const MaskConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& g = sg.graph();
  const int n = g.num_nodes();
  MaskPlan plan;
  plan.observed.resize(n);
  plan.masked.resize(n);
  plan.attr_target.assign(n, 0);
  for (int k = 0; k < n; ++k) {
    const std::int32_t i = pi.order[k];
    auto edges = earlier_edges(g, pi, i);
    const int m = static_cast<int>(edges.size());
    int masked = 0;
    if (m == 1) {
      masked = rng.bernoulli(cfg.edge_mask_ratio) ? 1 : 0;
    } else if (m >= 2) {
      // Stochastic rounding keeps the expected masked count at ratio * m.
      const double target = cfg.edge_mask_ratio * m;
      masked = static_cast<int>(std::floor(target));
      if (rng.bernoulli(target - masked)) ++masked;
      masked = std::clamp(masked, 1, m - 1);
    }
    rng.shuffle(edges);
    plan.masked[i].assign(edges.begin(), edges.begin() + masked);
    plan.observed[i].assign(edges.begin() + masked, edges.end());
    std::sort(plan.masked[i].begin(), plan.masked[i].end());
    std::sort(plan.observed[i].begin(), plan.observed[i].end());
    if (attr_maskable(cfg, g.type_of(i))) plan.attr_target[i] = rng.bernoulli(cfg.attr_target_ratio) ? 1 : 0;
  }
  return plan;
}

SeparatedGraph separate(const SampledSubgraph& sg, const MaskPlan& plan, const Permutation& pi,
                        bool node_separation) {
  const auto& g = sg.graph();
  const int n = g.num_nodes();
  if (plan.num_nodes() != n || static_cast<int>(plan.observed.size()) != n ||
      static_cast<int>(plan.masked.size()) != n || static_cast<int>(pi.position.size()) != n)
    throw InconsistentPlan("plan covers " + std::to_string(plan.num_nodes()) + " nodes, subgraph has " +
                           std::to_string(n));
  for (std::int32_t i = 0; i < n; ++i) {
    std::vector<PlanEdge> both = plan.observed[i];
    both.insert(both.end(), plan.masked[i].begin(), plan.masked[i].end());
    std::sort(both.begin(), both.end());
    if (both != earlier_edges(g, pi, i))
      throw InconsistentPlan("observed and masked edges of node " + std::to_string(i) +
                             " do not partition its earlier-order edges");
  }

  SeparatedGraph sep;
  sep.num_nodes = n;
  sep.separated = node_separation;
  sep.attr_slot.assign(n, -1);
  sep.slot_node.resize(n);
  std::iota(sep.slot_node.begin(), sep.slot_node.end(), 0);
  sep.mg.slot_type.resize(n);
  for (std::int32_t i = 0; i < n; ++i) sep.mg.slot_type[i] = g.type_of(i);
  for (std::int32_t i = 0; i < n; ++i) {
    if (!plan.attr_target[i]) continue;
    if (node_separation) {
      sep.attr_slot[i] = static_cast<std::int32_t>(sep.slot_node.size());
      sep.slot_node.push_back(i);
      sep.mg.slot_type.push_back(g.type_of(i));
    } else {
      sep.attr_slot[i] = i;
    }
  }
  sep.mg.num_slots = static_cast<int>(sep.slot_node.size());
  for (std::int32_t i = 0; i < n; ++i)
    for (const auto& e : plan.observed[i]) {
      sep.mg.edges.push_back({e.src, i, e.type});
      if (node_separation && sep.attr_slot[i] >= 0) sep.mg.edges.push_back({e.src, sep.attr_slot[i], e.type});
    }
  return sep;
}

std::vector<TypedInput> separated_inputs(Tape& tape, ParameterStore& params, const SeparatedGraph& sep,
                                         const AttributedGraph& graph) {
  std::vector<TypedInput> out;
  for (NodeTypeId t = 0; t < graph.types().num_node_types(); ++t) {
    const int d = graph.types().node_type(t).dim;
    Index edge_slots, attr_slots;
    for (std::int32_t s = 0; s < sep.num_slots(); ++s) {
      if (sep.mg.slot_type[s] != t) continue;
      (sep.is_attr_slot(s) ? attr_slots : edge_slots).push_back(s);
    }
    if (edge_slots.empty() && attr_slots.empty()) continue;
    std::vector<Var> parts;
    if (!edge_slots.empty()) {
      Tensor x = Tensor::matrix(static_cast<int>(edge_slots.size()), d);
      for (std::size_t k = 0; k < edge_slots.size(); ++k)
        std::copy_n(graph.attr(edge_slots[k]).data(), d, x.row(static_cast<int>(k)).data());
      parts.push_back(tape.constant(std::move(x)));
    }
    if (!attr_slots.empty()) {
      const Var init = tape.param(params.get("pretrain.xinit." + std::to_string(t)));
      parts.push_back(ops::row_gather(tape, init, Index(attr_slots.size(), 0)));
    }
    Index slots = edge_slots;
    slots.insert(slots.end(), attr_slots.begin(), attr_slots.end());
    out.push_back({t, parts.size() == 1 ? parts[0] : ops::concat_rows(tape, parts), std::move(slots)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decoders and losses

Decoders::Decoders(const TypeRegistry& types, int hidden_dim)
    : num_edge_types_(types.num_edge_types()), hidden_(hidden_dim) {
  for (NodeTypeId t = 0; t < types.num_node_types(); ++t) dims_.push_back(types.node_type(t).dim);
}

void Decoders::init_params(ParameterStore& params, Rng& rng) const {
  for (std::size_t t = 0; t < dims_.size(); ++t) {
    const std::string base = "dec.attr." + std::to_string(t);
    params.add(base + ".W1", hidden_, hidden_, Init::Glorot, &rng);
    params.add(base + ".b1", 1, hidden_, Init::Zeros);
    params.add(base + ".W2", hidden_, dims_[t], Init::Glorot, &rng);
    params.add(base + ".b2", 1, dims_[t], Init::Zeros);
  }
  for (EdgeTypeId r = 0; r < num_edge_types_; ++r)
    params.add("dec.edge." + std::to_string(r) + ".W", hidden_, hidden_, Init::Glorot, &rng);
}

Var Decoders::decode_attr(Tape& tape, ParameterStore& params, NodeTypeId type, Var h) const {
  const std::string base = "dec.attr." + std::to_string(type);
  const Var z = ops::tanh(tape, ops::add_row(tape, ops::matmul(tape, h, tape.param(params.get(base + ".W1"))),
                                             tape.param(params.get(base + ".b1"))));
  return ops::add_row(tape, ops::matmul(tape, z, tape.param(params.get(base + ".W2"))),
                      tape.param(params.get(base + ".b2")));
}

Var Decoders::edge_left(Tape& tape, ParameterStore& params, EdgeTypeId type, Var h) const {
  return ops::matmul(tape, h, tape.param(params.get("dec.edge." + std::to_string(type) + ".W")));
}

int AttributeTargets::count() const {
  int n = 0;
  for (const auto& g : groups) n += static_cast<int>(g.slots.size());
  return n;
}

AttributeTargets attribute_targets(const SeparatedGraph& sep, const AttributedGraph& graph) {
  AttributeTargets out;
  for (NodeTypeId t = 0; t < graph.types().num_node_types(); ++t) {
    const int d = graph.types().node_type(t).dim;
    AttributeTargets::Group grp;
    grp.type = t;
    std::vector<float> truth;
    for (std::int32_t i = 0; i < sep.num_nodes; ++i) {
      if (sep.attr_slot[i] < 0 || graph.type_of(i) != t) continue;
      grp.slots.push_back(sep.attr_slot[i]);
      const auto a = graph.attr(i);
      truth.insert(truth.end(), a.begin(), a.end());
    }
    if (grp.slots.empty()) continue;
    grp.truth = Tensor::matrix(static_cast<int>(grp.slots.size()), d, std::move(truth));
    out.groups.push_back(std::move(grp));
  }
  return out;
}

AttributeLoss attribute_distance(Tape& tape, std::span<const Var> predicted, const AttributeTargets& targets) {
  AttributeLoss out;
  out.num_targets = targets.count();
  if (predicted.size() != targets.groups.size()) throw ShapeError("one prediction per target group required");
  if (out.num_targets == 0) {
    out.no_targets = true;
    out.loss = tape.constant(Tensor::scalar(0.0f));
    return out;
  }
  Var total;
  for (std::size_t k = 0; k < targets.groups.size(); ++k) {
    const auto& grp = targets.groups[k];
    const Var diff = ops::sub(tape, predicted[k], tape.constant(grp.truth));
    const float w = 1.0f / (static_cast<float>(grp.truth.cols()) * static_cast<float>(out.num_targets));
    const Var term = ops::scale(tape, ops::sum_all(tape, ops::mul(tape, diff, diff)), w);
    total = total.valid() ? ops::add(tape, total, term) : term;
  }
  out.loss = total;
  return out;
}

AttributeLoss attribute_loss(Tape& tape, ParameterStore& params, const Decoders& dec, Var h,
                             const AttributeTargets& targets) {
  std::vector<Var> predicted;
  for (const auto& grp : targets.groups)
    predicted.push_back(dec.decode_attr(tape, params, grp.type, ops::row_gather(tape, h, grp.slots)));
  return attribute_distance(tape, predicted, targets);
}

// ---------------------------------------------------------------------------
// Queue

void AdaptiveQueue::push(std::span<const float> embedding, NodeTypeId type, NodeIndex source) {
  if (capacity_ == 0) return;
  if (!entries_.empty() && entries_.front().embedding.size() != embedding.size())
    throw ShapeError("queue embedding width changed");
  entries_.push_back({std::vector<float>(embedding.begin(), embedding.end()), type, source});
  while (entries_.size() > capacity_) entries_.pop_front();
}

void AdaptiveQueue::push_rows(const Tensor& rows, std::span<const NodeTypeId> types,
                              std::span<const NodeIndex> sources) {
  if (static_cast<int>(types.size()) != rows.rows()) throw ShapeError("one node type per queue row required");
  if (!sources.empty() && sources.size() != types.size()) throw ShapeError("one source per queue row required");
  // Rows that would be evicted within this call are skipped.
  const std::size_t n = types.size();
  const std::size_t first = n > capacity_ ? n - capacity_ : 0;
  for (std::size_t k = first; k < n; ++k)
    push(rows.row(static_cast<int>(k)), types[k], sources.empty() ? NodeIndex{-1} : sources[k]);
}

Tensor AdaptiveQueue::matrix() const {
  if (entries_.empty()) throw ShapeError("empty queue has no matrix");
  const int d = static_cast<int>(entries_.front().embedding.size());
  Tensor m = Tensor::matrix(static_cast<int>(entries_.size()), d);
  for (std::size_t k = 0; k < entries_.size(); ++k)
    std::copy(entries_[k].embedding.begin(), entries_[k].embedding.end(), m.row(static_cast<int>(k)).begin());
  return m;
}

void queue_update(AdaptiveQueue& queue, const Tensor& h, const SeparatedGraph& sep, const AttributedGraph& graph,
                  std::span<const NodeIndex> sources) {
  const int d = h.cols();
  Tensor rows = Tensor::matrix(sep.num_nodes, d);
  std::vector<NodeTypeId> types(sep.num_nodes);
  for (int i = 0; i < sep.num_nodes; ++i) {
    std::copy_n(h.row(i).data(), d, rows.row(i).data());
    types[i] = graph.type_of(i);
  }
  queue.push_rows(rows, types, sources.empty() ? sources : sources.first(sep.num_nodes));
}

// ---------------------------------------------------------------------------
// Contrastive edge losses

EdgeLoss contrastive_loss(Tape& tape, ParameterStore& params, const Decoders& dec, Var h,
                          const AttributedGraph& graph, std::span<const PositivePair> pairs,
                          const AdaptiveQueue* queue, const QueueContext* context) {
  EdgeLoss out;
  out.num_pairs = static_cast<int>(pairs.size());
  if (pairs.empty()) {
    out.loss = tape.constant(Tensor::scalar(0.0f));
    return out;
  }
  const int pool_offset = tape.value(h).rows();
  const bool use_queue = queue != nullptr && !queue->empty();
  Var pool = h;
  if (use_queue) {
    const Var q = tape.constant(queue->matrix());
    pool = ops::concat_rows(tape, std::vector<Var>{h, q});
  }

  // Negative candidates per (anchor, edge type), shared by all its positives.
  std::map<std::pair<std::int32_t, EdgeTypeId>, Index> negatives;
  auto negatives_of = [&](std::int32_t anchor, EdgeTypeId r) -> const Index& {
    auto [it, fresh] = negatives.try_emplace({anchor, r});
    if (!fresh) return it->second;
    const NodeTypeId t = graph.types().edge_type(r).src_type;
    for (NodeIndex k = graph.type_offset(t); k < graph.type_offset(t + 1); ++k)
      if (k != anchor && !graph.linked(k, anchor)) it->second.push_back(k);
    if (use_queue) {
      const bool filter = context != nullptr && context->graph != nullptr;
      const NodeIndex global = filter ? context->to_global[anchor] : -1;
      std::int32_t q = 0;
      for (const auto& e : queue->entries()) {
        const bool excluded = filter && e.source >= 0 &&
                              (e.source == global || context->graph->linked(e.source, global));
        if (e.type == t && !excluded) it->second.push_back(pool_offset + q);
        ++q;
      }
    }
    return it->second;
  };

  // Candidates grouped by edge type: each type has its own decoder matrix.
  std::map<EdgeTypeId, std::vector<std::size_t>> by_type;
  for (std::size_t p = 0; p < pairs.size(); ++p) by_type[pairs[p].type].push_back(p);

  std::vector<Var> score_parts;
  Index segment, positive_row(pairs.size());
  std::int32_t row = 0;
  out.num_candidates.assign(pairs.size(), 0);
  for (const auto& [r, ps] : by_type) {
    Index anchors, cands;
    for (std::size_t p : ps) {
      const auto& pr = pairs[p];
      const Index& neg = negatives_of(pr.anchor, r);
      positive_row[p] = row;
      anchors.push_back(pr.anchor);
      cands.push_back(pr.positive);
      segment.push_back(static_cast<std::int32_t>(p));
      for (auto c : neg) {
        anchors.push_back(pr.anchor);
        cands.push_back(c);
        segment.push_back(static_cast<std::int32_t>(p));
      }
      const auto count = static_cast<std::int32_t>(1 + neg.size());
      out.num_candidates[p] = count;
      row += count;
    }
    const Var left = dec.edge_left(tape, params, r, h);
    score_parts.push_back(ops::row_pair_dot(tape, left, pool, std::move(anchors), std::move(cands)));
  }
  const Var scores = score_parts.size() == 1 ? score_parts[0] : ops::concat_rows(tape, score_parts);
  const Tensor& sv = tape.value(scores);
  out.mean_negative_score.assign(pairs.size(), 0.0f);
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    const int k = out.num_candidates[p] - 1;
    if (k == 0) {
      out.mean_negative_score[p] = std::numeric_limits<float>::quiet_NaN();
      continue;
    }
    double s = 0.0;
    for (int c = 1; c <= k; ++c) s += sv[positive_row[p] + c];
    out.mean_negative_score[p] = static_cast<float>(s / k);
  }

  const Var lse = ops::segment_logsumexp(tape, scores, std::move(segment), static_cast<int>(pairs.size()));
  const Var pos = ops::row_gather(tape, scores, positive_row);
  out.log_denominator.assign(tape.value(lse).values().begin(), tape.value(lse).values().end());
  out.positive_score.assign(tape.value(pos).values().begin(), tape.value(pos).values().end());
  out.loss = ops::scale(tape, ops::sum_all(tape, ops::sub(tape, lse, pos)), 1.0f / static_cast<float>(pairs.size()));
  return out;
}

EdgeLoss edge_loss(Tape& tape, ParameterStore& params, const Decoders& dec, Var h, const SampledSubgraph& sg,
                   const MaskPlan& plan, const AdaptiveQueue* queue, const QueueContext* context) {
  std::vector<PositivePair> pairs;
  for (std::int32_t i = 0; i < plan.num_nodes(); ++i)
    for (const auto& e : plan.masked[i]) pairs.push_back({i, e.src, e.type});
  return contrastive_loss(tape, params, dec, h, sg.graph(), pairs, queue, context);
}

GaeMask build_gae_mask(const SampledSubgraph& sg, double mask_ratio, Rng& rng) {
  const auto& g = sg.graph();
  GaeMask out;
  std::vector<Edge> hidden;
  for (const auto& e : g.edges()) {
    const auto& info = g.types().edge_type(e.type);
    if (info.is_reverse || (info.symmetric && e.src > e.dst)) continue;
    if (rng.bernoulli(mask_ratio)) {
      out.masked.push_back({e.src, e.dst, e.type});
      hidden.push_back(e);
      hidden.push_back({e.dst, e.src, info.reverse});
    }
  }
  std::sort(hidden.begin(), hidden.end());
  out.observed.num_slots = g.num_nodes();
  out.observed.slot_type.resize(g.num_nodes());
  for (NodeIndex i = 0; i < g.num_nodes(); ++i) out.observed.slot_type[i] = g.type_of(i);
  for (const auto& e : g.edges())
    if (!std::binary_search(hidden.begin(), hidden.end(), e)) out.observed.edges.push_back({e.src, e.dst, e.type});
  return out;
}

EdgeLoss gae_baseline_loss(Tape& tape, ParameterStore& params, const Decoders& dec, Var h,
                           const SampledSubgraph& sg, std::span<const PlanEdge> masked_edges) {
  std::vector<PositivePair> pairs;
  for (const auto& e : masked_edges) pairs.push_back({e.dst, e.src, e.type});
  return contrastive_loss(tape, params, dec, h, sg.graph(), pairs, nullptr);
}

// ---------------------------------------------------------------------------
// Training

std::string to_string(Objective o) {
  switch (o) {
    case Objective::Full: return "full";
    case Objective::AttrOnly: return "attr";
    case Objective::EdgeOnly: return "edge";
    case Objective::Gae: return "gae";
  }
  return "full";
}

Objective parse_objective(const std::string& s) {
  if (s == "full") return Objective::Full;
  if (s == "attr") return Objective::AttrOnly;
  if (s == "edge") return Objective::EdgeOnly;
  if (s == "gae") return Objective::Gae;
  throw ConfigError("objective", "expected full, attr, edge or gae, got '" + s + "'");
}

void PretrainConfig::validate() const {
  layer.validate();
  budget.validate();
  mask.validate();
  if (epochs < 0) throw ConfigError("pretrain_epochs", "must be nonnegative");
  if (batches_per_epoch <= 0) throw ConfigError("batches_per_epoch", "must be positive");
  if (val_batches < 0) throw ConfigError("pretrain_val_batches", "must be nonnegative");
  if (!(lr_max >= 0.0f) || !(lr_min >= 0.0f) || lr_min > lr_max) throw ConfigError("lr_min", "need 0 <= lr_min <= lr_max");
  if (!(edge_weight >= 0.0f)) throw ConfigError("edge_weight", "must be nonnegative");
}

PretrainModel::PretrainModel(const TypeRegistry& types, const LayerConfig& layer, Rng& init_rng)
    : encoder(layer, types), decoders(types, layer.hidden_dim) {
  encoder.init_params(params, init_rng);
  decoders.init_params(params, init_rng);
  for (NodeTypeId t = 0; t < types.num_node_types(); ++t)
    params.add("pretrain.xinit." + std::to_string(t), 1, types.node_type(t).dim, Init::Glorot, &init_rng);
}

namespace {

PretrainModel make_model(const TypeRegistry& types, const LayerConfig& layer, std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "init");
  return PretrainModel(types, layer, rng);
}

}  // namespace

struct Pretrainer::Forward {
  Var total;
  Var h;
  SeparatedGraph sep;
  BatchResult stats;
};

Pretrainer::Pretrainer(const AttributedGraph& graph, PretrainConfig cfg, std::uint64_t seed)
    : graph_(graph),
      cfg_((cfg.validate(), std::move(cfg))),
      seed_(seed),
      model_(make_model(graph.types(), cfg_.layer, seed)),
      optimizer_(cfg_.adamw),
      queue_(cfg_.objective == Objective::Full || cfg_.objective == Objective::EdgeOnly ? cfg_.queue_capacity : 0) {
  if (graph.num_nodes() == 0) throw EmptySplit("pre-training graph has no nodes");
  for (int b = 0; b < cfg_.val_batches; ++b)
    val_batches_.push_back(sample(Rng::derive_seed(seed_, "pretrain-val-sampler", b)));
}

SampledSubgraph Pretrainer::sample(std::uint64_t seed) const { return sample_subgraph(graph_, cfg_.budget, seed); }

Pretrainer::Forward Pretrainer::forward(Tape& tape, ParameterStore& params, const SampledSubgraph& sg, Rng& rng,
                                        bool training, const AdaptiveQueue* queue) const {
  Forward f;
  EncodeOptions opt;
  opt.training = training;
  opt.dropout_rng = &rng;
  const auto& g = sg.graph();

  if (cfg_.objective == Objective::Gae) {
    const GaeMask mask = build_gae_mask(sg, cfg_.mask.edge_mask_ratio, rng);
    const auto inputs = graph_inputs(tape, g);
    f.h = model_.encoder.encode(tape, params, mask.observed, inputs, opt);
    const EdgeLoss el = gae_baseline_loss(tape, params, model_.decoders, f.h, sg, mask.masked);
    f.total = el.loss;
    f.stats.loss_edge = tape.value(el.loss).item();
    f.stats.edge_pairs = el.num_pairs;
    f.stats.loss_total = f.stats.loss_edge;
    return f;
  }

  const bool use_attr = cfg_.objective != Objective::EdgeOnly;
  const bool use_edge = cfg_.objective != Objective::AttrOnly;
  const Permutation pi = permutation_from_sampling(sg, cfg_.permutation, rng);
  MaskPlan plan = build_mask_plan(sg, pi, cfg_.mask, rng);
  if (!use_attr) std::fill(plan.attr_target.begin(), plan.attr_target.end(), 0);
  f.sep = separate(sg, plan, pi, cfg_.node_separation);
  const auto inputs = separated_inputs(tape, params, f.sep, g);
  f.h = model_.encoder.encode(tape, params, f.sep.mg, inputs, opt);

  Var total;
  if (use_attr) {
    const AttributeLoss al = attribute_loss(tape, params, model_.decoders, f.h, attribute_targets(f.sep, g));
    f.stats.loss_attr = tape.value(al.loss).item();
    f.stats.attr_targets = al.num_targets;
    total = al.loss;
  }
  if (use_edge) {
    const QueueContext context{&graph_, sg.sub.new_to_old};
    const EdgeLoss el = edge_loss(tape, params, model_.decoders, f.h, sg, plan, queue, &context);
    f.stats.loss_edge = tape.value(el.loss).item();
    f.stats.edge_pairs = el.num_pairs;
    const Var weighted = ops::scale(tape, el.loss, cfg_.edge_weight);
    total = total.valid() ? ops::add(tape, total, weighted) : weighted;
  }
  f.total = total;
  f.stats.loss_total = tape.value(total).item();
  return f;
}

BatchResult Pretrainer::evaluate_batch(const SampledSubgraph& sg, Rng& rng, const AdaptiveQueue* queue) const {
  Tape tape;
  // Parameters are only read: a copy keeps this method const.
  ParameterStore params = model_.params;
  return forward(tape, params, sg, rng, false, queue).stats;
}

namespace {

std::string numeric_dump(const ParameterStore& params, const BatchResult& r) {
  std::ostringstream os;
  os << "non-finite pre-training loss (attr=" << r.loss_attr << ", edge=" << r.loss_edge << ")";
  for (const auto& p : params) {
    double sq = 0.0;
    bool finite = true;
    for (float v : p.value.values()) {
      finite = finite && std::isfinite(v);
      sq += static_cast<double>(v) * v;
    }
    os << "\n  " << p.name << " |w|=" << std::sqrt(sq) << (finite ? "" : " (non-finite)");
  }
  return os.str();
}

}  // namespace

BatchResult Pretrainer::train_batch(const SampledSubgraph& sg, Rng& rng, float lr) {
  Tape tape;
  const AdaptiveQueue* q = queue_.capacity() > 0 ? &queue_ : nullptr;
  Forward f = forward(tape, model_.params, sg, rng, true, q);
  if (!std::isfinite(f.stats.loss_total)) throw NumericalError(numeric_dump(model_.params, f.stats));
  model_.params.zero_grad();
  tape.backward(f.total);
  optimizer_.step(model_.params, lr);
  if (q != nullptr && !f.sep.slot_node.empty()) queue_update(queue_, tape.value(f.h), f.sep, sg.graph(), sg.sub.new_to_old);
  return f.stats;
}

EpochStats Pretrainer::run_epoch() {
  EpochStats s;
  s.epoch = ++epoch_;
  double lr_sum = 0.0;
  for (int b = 0; b < cfg_.batches_per_epoch; ++b) {
    const float lr = cosine_lr(step_, total_steps(), cfg_.lr_max, cfg_.lr_min);
    const SampledSubgraph sg = sample(Rng::derive_seed(seed_, "sampler", static_cast<std::uint64_t>(step_)));
    Rng rng = Rng::stream(seed_, "batch", static_cast<std::uint64_t>(step_));
    const BatchResult r = train_batch(sg, rng, lr);
    s.loss_attr += r.loss_attr;
    s.loss_edge += r.loss_edge;
    s.loss_total += r.loss_total;
    lr_sum += lr;
    ++step_;
  }
  const double nb = cfg_.batches_per_epoch;
  s.loss_attr /= nb;
  s.loss_edge /= nb;
  s.loss_total /= nb;
  s.lr = lr_sum / nb;
  s.queue_fill = queue_.size();

  if (!val_batches_.empty()) {
    double v = 0.0;
    for (std::size_t b = 0; b < val_batches_.size(); ++b) {
      Rng rng = Rng::stream(seed_, "pretrain-val", b);
      v += evaluate_batch(val_batches_[b], rng, nullptr).loss_total;
    }
    s.val_loss = v / static_cast<double>(val_batches_.size());
    if (!best_ || s.val_loss < best_val_) {
      best_val_ = s.val_loss;
      best_ = model_.params;
    }
  }
  return s;
}

std::vector<EpochStats> Pretrainer::run(const std::function<void(const EpochStats&)>& on_epoch) {
  std::vector<EpochStats> out;
  while (epoch_ < cfg_.epochs) {
    out.push_back(run_epoch());
    if (on_epoch) on_epoch(out.back());
  }
  if (best_) model_.params = *best_;
  return out;
}

}  // namespace gptgnn
