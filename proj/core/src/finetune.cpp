#include "gptgnn/finetune.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gptgnn/errors.hpp"
#include "gptgnn/metrics.hpp"

namespace gptgnn {

std::string to_string(TransferKind k) {
  switch (k) {
    case TransferKind::Time: return "time";
    case TransferKind::Field: return "field";
    case TransferKind::TimeField: return "time+field";
  }
  return "time+field";
}

TransferKind parse_transfer_kind(const std::string& s) {
  if (s == "time") return TransferKind::Time;
  if (s == "field") return TransferKind::Field;
  if (s == "time+field") return TransferKind::TimeField;
  throw ConfigError("transfer", "expected time, field or time+field, got '" + s + "'");
}

std::string to_string(TaskKind k) { return k == TaskKind::NodeClass ? "node-class" : "link-pred"; }

TaskKind parse_task_kind(const std::string& s) {
  if (s == "node-class") return TaskKind::NodeClass;
  if (s == "link-pred") return TaskKind::LinkPred;
  throw ConfigError("task", "expected node-class or link-pred, got '" + s + "'");
}

void SplitSpec::validate() const {
  if (!(boundary_time <= val_time && val_time <= test_time))
    throw ConfigError("val_time", "need boundary_time <= val_time <= test_time");
  if (kind != TransferKind::Time && held_fields.empty()) throw ConfigError("held_fields", "must not be empty");
  if (!(label_fraction > 0.0 && label_fraction <= 1.0)) throw ConfigError("label_fraction", "must be in (0, 1]");
  if (target_type < 0) throw ConfigError("target_type", "must be nonnegative");
}

void FinetuneConfig::validate() const {
  if (epochs < 0) throw ConfigError("finetune_epochs", "must be nonnegative");
  if (!(lr_max >= 0.0f) || !(lr_min >= 0.0f) || lr_min > lr_max)
    throw ConfigError("finetune_lr_min", "need 0 <= finetune_lr_min <= finetune_lr_max");
}

namespace {

bool held(const SplitSpec& spec, int field) {
  return std::find(spec.held_fields.begin(), spec.held_fields.end(), field) != spec.held_fields.end();
}

bool has_region_meta(const NodeMeta& m) { return m.time.has_value() && m.field.has_value(); }

}  // namespace

bool in_pretrain_region(const SplitSpec& spec, const NodeMeta& m) {
  const bool early = *m.time < spec.boundary_time;
  const bool other_field = !held(spec, *m.field);
  switch (spec.kind) {
    case TransferKind::Time: return early;
    case TransferKind::Field: return other_field;
    case TransferKind::TimeField: return early && other_field;
  }
  return false;
}

bool in_finetune_region(const SplitSpec& spec, const NodeMeta& m) {
  const bool late = *m.time >= spec.boundary_time;
  const bool held_field = held(spec, *m.field);
  switch (spec.kind) {
    case TransferKind::Time: return late;
    case TransferKind::Field: return held_field;
    case TransferKind::TimeField: return late && held_field;
  }
  return false;
}

TransferSplit make_split(const AttributedGraph& g, const SplitSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int n = g.num_nodes();
  std::vector<char> pre(n, 0), fine(n, 0);
  bool any_pre = false, any_fine = false;
  for (NodeIndex i = 0; i < n; ++i) {
    const auto& m = g.meta(i);
    if (!has_region_meta(m)) continue;
    pre[i] = in_pretrain_region(spec, m);
    fine[i] = in_finetune_region(spec, m);
    any_pre = any_pre || pre[i];
    any_fine = any_fine || fine[i];
  }
  if (!any_pre) throw EmptySplit("pre-training region is empty");
  if (!any_fine) throw EmptySplit("fine-tuning region is empty");

  TransferSplit s;
  for (NodeIndex i = 0; i < n; ++i) {
    bool p = pre[i], f = fine[i];
    if (!has_region_meta(g.meta(i)))
      for (const auto& e : g.in_edges(i)) {
        if (!has_region_meta(g.meta(e.src))) continue;
        p = p || pre[e.src];
        f = f || fine[e.src];
      }
    if (p) s.pretrain_nodes.push_back(i);
    if (f) s.finetune_nodes.push_back(i);
  }

  for (NodeIndex i : s.finetune_nodes) {
    const auto& m = g.meta(i);
    if (g.type_of(i) != spec.target_type || !m.class_label || !m.time || !fine[i]) continue;
    if (*m.time < spec.val_time)
      s.train_all.push_back(i);
    else if (*m.time < spec.test_time)
      s.val.push_back(i);
    else
      s.test.push_back(i);
  }
  if (s.train_all.empty()) throw EmptySplit("fine-tuning train set is empty");
  if (s.val.empty()) throw EmptySplit("fine-tuning validation set is empty");
  if (s.test.empty()) throw EmptySplit("fine-tuning test set is empty");

  std::vector<NodeIndex> shuffled = s.train_all;
  Rng rng = Rng::stream(seed, "split");
  rng.shuffle(shuffled);
  const auto keep = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::ceil(spec.label_fraction * static_cast<double>(shuffled.size()) - 1e-9)));
  s.train.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(std::min(keep, shuffled.size())));
  std::sort(s.train.begin(), s.train.end());
  return s;
}

void load_encoder(ParameterStore& params, const ParameterStore& pretrained) {
  std::vector<std::string> bad;
  for (auto& p : params) {
    if (p.name.rfind("gnn.", 0) != 0) continue;
    const Parameter* src = pretrained.find(p.name);
    if (src == nullptr) {
      bad.push_back(p.name + " (missing)");
    } else if (src->value.shape() != p.value.shape()) {
      bad.push_back(p.name + " (expected " + shape_string(p.value.shape()) + ", found " +
                    shape_string(src->value.shape()) + ")");
    }
  }
  if (!bad.empty()) throw IncompatibleCheckpoint(bad);
  for (auto& p : params)
    if (p.name.rfind("gnn.", 0) == 0) p.value = pretrained.get(p.name).value;
}

namespace {

Index region_indices(const InducedSubgraph& region, const std::vector<NodeIndex>& nodes) {
  Index out;
  out.reserve(nodes.size());
  for (NodeIndex i : nodes) out.push_back(region.old_to_new[i]);
  return out;
}

int argmax_row(std::span<const float> r) {
  return static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
}

struct LinkSets {
  std::vector<Edge> train, val, test;
  MessageGraph mg;
};

LinkSets link_sets(const AttributedGraph& region, EdgeTypeId type, const SplitSpec& times) {
  const auto& info = region.types().edge_type(type);
  LinkSets s;
  std::vector<Edge> hidden;
  for (const auto& e : region.edges()) {
    if (e.type != type || (info.symmetric && e.src > e.dst)) continue;
    int t = std::numeric_limits<int>::min();
    for (NodeIndex v : {e.src, e.dst})
      if (region.meta(v).time) t = std::max(t, *region.meta(v).time);
    if (t < times.val_time) {
      s.train.push_back(e);
      continue;
    }
    (t < times.test_time ? s.val : s.test).push_back(e);
    hidden.push_back(e);
    hidden.push_back({e.dst, e.src, info.reverse});
  }
  std::sort(hidden.begin(), hidden.end());
  s.mg.num_slots = region.num_nodes();
  s.mg.slot_type.resize(region.num_nodes());
  for (NodeIndex i = 0; i < region.num_nodes(); ++i) s.mg.slot_type[i] = region.type_of(i);
  for (const auto& e : region.edges())
    if (!std::binary_search(hidden.begin(), hidden.end(), e)) s.mg.edges.push_back({e.src, e.dst, e.type});
  return s;
}

// Anchor is the edge destination, the candidate pool the source type.
double link_mrr(const AttributedGraph& region, const Tensor& left, const Tensor& h, const std::vector<Edge>& edges) {
  std::vector<std::vector<double>> scores;
  std::vector<std::size_t> truth;
  const int d = h.cols();
  auto score = [&](NodeIndex a, NodeIndex b) {
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += static_cast<double>(left(a, k)) * h(b, k);
    return s;
  };
  for (const auto& e : edges) {
    const NodeTypeId t = region.type_of(e.src);
    std::vector<double> q{score(e.dst, e.src)};
    for (NodeIndex k = region.type_offset(t); k < region.type_offset(t + 1); ++k)
      if (k != e.dst && !region.linked(k, e.dst)) q.push_back(score(e.dst, k));
    scores.push_back(std::move(q));
    truth.push_back(0);
  }
  return mrr(scores, truth);
}

}  // namespace

FinetuneResult finetune(const AttributedGraph& g, const TransferSplit& split, const LayerConfig& layer,
                        const ParameterStore* pretrained, const Task& task, const FinetuneConfig& cfg,
                        std::uint64_t seed) {
  cfg.validate();
  layer.validate();
  const InducedSubgraph region = induced_subgraph(g, std::span<const NodeIndex>(split.finetune_nodes));
  const AttributedGraph& rg = region.graph;

  GnnEncoder encoder(layer, g.types());
  ParameterStore params;
  Rng init_rng = Rng::stream(seed, "finetune-init");
  encoder.init_params(params, init_rng);
  if (pretrained != nullptr) load_encoder(params, *pretrained);

  const int hidden = layer.hidden_dim;
  const bool node_class = task.kind == TaskKind::NodeClass;

  // Node classification data.
  Index train_idx, val_idx, test_idx;
  std::vector<int> train_y, val_y, test_y;
  int num_classes = 0;
  // Link prediction data.
  LinkSets links;
  MessageGraph mg;

  if (node_class) {
    for (NodeIndex i = 0; i < g.num_nodes(); ++i)
      if (g.meta(i).class_label) num_classes = std::max(num_classes, *g.meta(i).class_label + 1);
    train_idx = region_indices(region, split.train);
    val_idx = region_indices(region, split.val);
    test_idx = region_indices(region, split.test);
    for (NodeIndex i : split.train) train_y.push_back(*g.meta(i).class_label);
    for (NodeIndex i : split.val) val_y.push_back(*g.meta(i).class_label);
    for (NodeIndex i : split.test) test_y.push_back(*g.meta(i).class_label);
    params.add("head.W", hidden, num_classes, Init::Glorot, &init_rng);
    params.add("head.b", 1, num_classes, Init::Zeros);
    mg = MessageGraph::from_graph(rg);
  } else {
    // Edge time boundaries follow the labeled node split.
    SplitSpec times;
    int val_t = std::numeric_limits<int>::max(), test_t = std::numeric_limits<int>::max();
    for (NodeIndex i : split.val) val_t = std::min(val_t, *g.meta(i).time);
    for (NodeIndex i : split.test) test_t = std::min(test_t, *g.meta(i).time);
    times.val_time = val_t;
    times.test_time = test_t;
    links = link_sets(rg, task.link_type, times);
    if (links.train.empty() || links.val.empty() || links.test.empty())
      throw EmptySplit("link prediction needs train, validation and test edges");
    params.add("head.link.W", hidden, hidden, Init::Glorot, &init_rng);
    mg = links.mg;
  }

  auto evaluate = [&](FinetuneEpoch& ep) {
    Tape tape;
    const auto inputs = graph_inputs(tape, rg);
    const Var h = encoder.encode(tape, params, mg, inputs);
    if (node_class) {
      const Var logits =
          ops::add_row(tape, ops::matmul(tape, h, tape.param(params.get("head.W"))), tape.param(params.get("head.b")));
      const Tensor& lv = tape.value(logits);
      auto metric = [&](const Index& idx, const std::vector<int>& y) {
        std::vector<int> pred;
        for (auto r : idx) pred.push_back(argmax_row(lv.row(r)));
        return micro_f1(pred, y);
      };
      ep.train_metric = metric(train_idx, train_y);
      ep.val_metric = metric(val_idx, val_y);
      ep.test_metric = metric(test_idx, test_y);
    } else {
      const Var left = ops::matmul(tape, h, tape.param(params.get("head.link.W")));
      const Tensor& hv = tape.value(h);
      const Tensor& lv = tape.value(left);
      ep.train_metric = link_mrr(rg, lv, hv, links.train);
      ep.val_metric = link_mrr(rg, lv, hv, links.val);
      ep.test_metric = link_mrr(rg, lv, hv, links.test);
    }
  };

  FinetuneResult out;
  FinetuneEpoch first;
  evaluate(first);
  out.history.push_back(first);
  out.best_epoch = 0;
  out.val_metric = first.val_metric;
  out.test_metric = first.test_metric;
  out.params = params;

  AdamW opt(cfg.adamw);
  Rng dropout_rng = Rng::stream(seed, "finetune-dropout");
  for (int e = 1; e <= cfg.epochs; ++e) {
    FinetuneEpoch ep;
    ep.epoch = e;
    {
      Tape tape;
      EncodeOptions eo;
      eo.training = true;
      eo.dropout_rng = &dropout_rng;
      const auto inputs = graph_inputs(tape, rg);
      const Var h = encoder.encode(tape, params, mg, inputs, eo);
      Var loss;
      if (node_class) {
        const Var hs = ops::row_gather(tape, h, train_idx);
        const Var logits = ops::add_row(tape, ops::matmul(tape, hs, tape.param(params.get("head.W"))),
                                        tape.param(params.get("head.b")));
        const Var picked = ops::pick(tape, ops::log_softmax_rows(tape, logits), Index(train_y.begin(), train_y.end()));
        loss = ops::scale(tape, ops::sum_all(tape, picked), -1.0f / static_cast<float>(train_y.size()));
      } else {
        // In-batch negatives: the other positives of the same type.
        const Var left = ops::matmul(tape, h, tape.param(params.get("head.link.W")));
        std::vector<NodeIndex> pool;
        for (const auto& ed : links.train) pool.push_back(ed.src);
        std::sort(pool.begin(), pool.end());
        pool.erase(std::unique(pool.begin(), pool.end()), pool.end());
        Index ia, ib, seg, pos;
        for (std::size_t p = 0; p < links.train.size(); ++p) {
          const auto& ed = links.train[p];
          pos.push_back(static_cast<std::int32_t>(ia.size()));
          ia.push_back(ed.dst);
          ib.push_back(ed.src);
          seg.push_back(static_cast<std::int32_t>(p));
          for (NodeIndex c : pool)
            if (c != ed.dst && !rg.linked(c, ed.dst)) {
              ia.push_back(ed.dst);
              ib.push_back(c);
              seg.push_back(static_cast<std::int32_t>(p));
            }
        }
        const Var scores = ops::row_pair_dot(tape, left, h, std::move(ia), std::move(ib));
        const Var lse =
            ops::segment_logsumexp(tape, scores, std::move(seg), static_cast<int>(links.train.size()));
        const Var ps = ops::row_gather(tape, scores, std::move(pos));
        loss = ops::scale(tape, ops::sum_all(tape, ops::sub(tape, lse, ps)),
                          1.0f / static_cast<float>(links.train.size()));
      }
      ep.loss = tape.value(loss).item();
      if (!std::isfinite(ep.loss)) throw NumericalError("non-finite fine-tuning loss at epoch " + std::to_string(e));
      params.zero_grad();
      tape.backward(loss);
      opt.step(params, cosine_lr(e - 1, cfg.epochs, cfg.lr_max, cfg.lr_min));
    }
    evaluate(ep);
    out.history.push_back(ep);
    if (ep.val_metric > out.val_metric) {
      out.best_epoch = e;
      out.val_metric = ep.val_metric;
      out.test_metric = ep.test_metric;
      out.params = params;
    }
  }
  return out;
}

}  // namespace gptgnn
