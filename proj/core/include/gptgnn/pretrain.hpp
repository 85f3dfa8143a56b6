#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gptgnn/autodiff.hpp"
#include "gptgnn/layers.hpp"
#include "gptgnn/optim.hpp"
#include "gptgnn/sampler.hpp"

namespace gptgnn {

/// A stored edge src -> dst in subgraph indices. In a mask plan, src is
/// earlier than dst in the generation order and dst is the node generating it.
struct PlanEdge {
  std::int32_t src = 0;
  std::int32_t dst = 0;
  EdgeTypeId type = 0;

  auto operator<=>(const PlanEdge&) const = default;
};

/// Per node: its edges from earlier-generated nodes split into observed and
/// masked sets, and whether its attributes are a generation target.
struct MaskPlan {
  std::vector<std::vector<PlanEdge>> observed;
  std::vector<std::vector<PlanEdge>> masked;
  std::vector<char> attr_target;

  int num_nodes() const { return static_cast<int>(attr_target.size()); }
  int num_attr_targets() const;
  std::size_t num_masked() const;
};

struct MaskConfig {
  double edge_mask_ratio = 0.5;
  double attr_target_ratio = 0.3;
  // Node types whose attributes may be generated; empty means all.
  std::vector<NodeTypeId> attr_types;

  void validate() const;
  bool operator==(const MaskConfig&) const = default;
};

/// For each node, its earlier-order edges are split so that on average
/// edge_mask_ratio of them are masked; with two or more edges both sides are
/// nonempty. Attribute targets are independent draws with attr_target_ratio.
MaskPlan build_mask_plan(const SampledSubgraph& sg, const Permutation& pi, const MaskConfig& cfg, Rng& rng);

/// Computation graph with duplicated nodes. Slot i (< num_nodes) is node i's
/// edge-generation copy, fed its true attributes. Attribute targets get an
/// extra attribute-generation slot fed the learned placeholder X^init; it
/// receives the same messages as the edge copy and sends none. Only observed
/// edges from earlier to later nodes carry messages.
struct SeparatedGraph {
  MessageGraph mg;
  int num_nodes = 0;
  // Per node: slot whose output predicts its attributes, or -1. With node
  // separation disabled this is the node's own edge slot.
  std::vector<std::int32_t> attr_slot;
  std::vector<std::int32_t> slot_node;
  bool separated = true;

  int num_slots() const { return mg.num_slots; }
  bool is_attr_slot(std::int32_t s) const { return s >= num_nodes; }
};

SeparatedGraph separate(const SampledSubgraph& sg, const MaskPlan& plan, const Permutation& pi,
                        bool node_separation = true);

/// GNN inputs for a separated graph: true attributes for edge slots, the
/// per-type placeholder parameter `pretrain.xinit.<type>` for attribute slots.
std::vector<TypedInput> separated_inputs(Tape& tape, ParameterStore& params, const SeparatedGraph& sep,
                                         const AttributedGraph& graph);

// ---------------------------------------------------------------------------

/// Per node type: a two-layer perceptron hidden -> hidden -> d_type for
/// attributes. Per edge type: a bilinear score s(a, b) = a^T W b.
class Decoders {
 public:
  Decoders(const TypeRegistry& types, int hidden_dim);

  void init_params(ParameterStore& params, Rng& rng) const;
  Var decode_attr(Tape& tape, ParameterStore& params, NodeTypeId type, Var h) const;
  /// h * W_r, so that row a of the result dotted with b is s_r(h_a, b).
  Var edge_left(Tape& tape, ParameterStore& params, EdgeTypeId type, Var h) const;

  int hidden_dim() const { return hidden_; }

 private:
  std::vector<int> dims_;
  int num_edge_types_;
  int hidden_;
};

/// Attribute targets grouped by node type.
struct AttributeTargets {
  struct Group {
    NodeTypeId type = 0;
    Index slots;
    Tensor truth;  // [slots x d_type]
  };
  std::vector<Group> groups;

  int count() const;
};

AttributeTargets attribute_targets(const SeparatedGraph& sep, const AttributedGraph& graph);

struct AttributeLoss {
  Var loss;
  int num_targets = 0;
  bool no_targets = false;
};

/// Mean over targets of ||pred - x||^2 / d_type; pred[k] rows align with the
/// group's truth rows.
AttributeLoss attribute_distance(Tape& tape, std::span<const Var> predicted, const AttributeTargets& targets);
AttributeLoss attribute_loss(Tape& tape, ParameterStore& params, const Decoders& dec, Var h,
                             const AttributeTargets& targets);

// ---------------------------------------------------------------------------

/// FIFO of detached embeddings from earlier batches, used as extra negatives.
class AdaptiveQueue {
 public:
  struct Entry {
    std::vector<float> embedding;
    NodeTypeId type = 0;
    // Node of the pre-training graph the embedding came from, or -1.
    NodeIndex source = -1;

    bool operator==(const Entry&) const = default;
  };

  explicit AdaptiveQueue(std::size_t capacity = 256) : capacity_(capacity) {}

  void push(std::span<const float> embedding, NodeTypeId type, NodeIndex source = -1);
  /// Appends rows in order, evicting the oldest entries beyond capacity.
  /// `sources` is empty or has one entry per row.
  void push_rows(const Tensor& rows, std::span<const NodeTypeId> types, std::span<const NodeIndex> sources = {});

  std::size_t size() const { return entries_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return entries_.empty(); }
  /// Oldest first.
  const std::deque<Entry>& entries() const { return entries_; }
  /// All embeddings as one matrix, oldest first. Requires a nonempty queue.
  Tensor matrix() const;

 private:
  std::size_t capacity_;
  std::deque<Entry> entries_;
};

/// Appends every edge-generation slot's current representation (no gradient
/// link is kept). `sources` maps subgraph nodes to the pre-training graph.
void queue_update(AdaptiveQueue& queue, const Tensor& h, const SeparatedGraph& sep, const AttributedGraph& graph,
                  std::span<const NodeIndex> sources = {});

/// Where the current subgraph sits in the pre-training graph. With it, queue
/// entries that are the anchor itself or linked to it are not negatives.
struct QueueContext {
  const AttributedGraph* graph = nullptr;
  std::span<const NodeIndex> to_global;
};

/// One positive edge: anchor i should rank `positive` above its negatives
/// under the decoder of edge type `type`.
struct PositivePair {
  std::int32_t anchor = 0;
  std::int32_t positive = 0;
  EdgeTypeId type = 0;
};

struct EdgeLoss {
  Var loss;
  int num_pairs = 0;
  // Per pair, in input order: log of the softmax denominator, the positive
  // score, and the candidate count (positive included).
  std::vector<float> log_denominator;
  std::vector<float> positive_score;
  std::vector<int> num_candidates;
  // Mean negative score per pair (NaN when there are no negatives).
  std::vector<float> mean_negative_score;
};

/// Contrastive loss over positive pairs. Candidates for pair (i, j+, r) are
/// j+ plus every subgraph node of r's source type that is not i and not
/// linked to i, plus the queue entries of that type. Rows of h are slots;
/// node k's embedding is row k.
EdgeLoss contrastive_loss(Tape& tape, ParameterStore& params, const Decoders& dec, Var h,
                          const AttributedGraph& graph, std::span<const PositivePair> pairs,
                          const AdaptiveQueue* queue, const QueueContext* context = nullptr);

/// Edge generation loss: one positive pair per masked edge of the plan.
EdgeLoss edge_loss(Tape& tape, ParameterStore& params, const Decoders& dec, Var h, const SampledSubgraph& sg,
                   const MaskPlan& plan, const AdaptiveQueue* queue, const QueueContext* context = nullptr);

/// Edge masking for the graph auto-encoder baseline: a global fraction of
/// node pairs is hidden, messages flow along all remaining edges in both
/// directions, and there is no ordering or node duplication.
struct GaeMask {
  std::vector<PlanEdge> masked;
  MessageGraph observed;
};

GaeMask build_gae_mask(const SampledSubgraph& sg, double mask_ratio, Rng& rng);
EdgeLoss gae_baseline_loss(Tape& tape, ParameterStore& params, const Decoders& dec, Var h,
                           const SampledSubgraph& sg, std::span<const PlanEdge> masked_edges);

// ---------------------------------------------------------------------------
// Training

enum class Objective { Full, AttrOnly, EdgeOnly, Gae };

std::string to_string(Objective o);
Objective parse_objective(const std::string& s);

struct PretrainConfig {
  LayerConfig layer;
  SampleBudget budget;
  PermutationMode permutation = PermutationMode::Uniform;
  MaskConfig mask;
  Objective objective = Objective::Full;
  bool node_separation = true;
  float edge_weight = 1.0f;  // lambda
  std::size_t queue_capacity = 256;
  int epochs = 100;
  int batches_per_epoch = 8;
  int val_batches = 2;
  float lr_max = 1e-3f;
  float lr_min = 1e-5f;
  AdamWConfig adamw;

  void validate() const;
  bool operator==(const PretrainConfig&) const = default;
};

/// Encoder, decoders and every pre-training parameter.
struct PretrainModel {
  GnnEncoder encoder;
  Decoders decoders;
  ParameterStore params;

  PretrainModel(const TypeRegistry& types, const LayerConfig& layer, Rng& init_rng);
};

struct BatchResult {
  double loss_attr = 0.0;
  double loss_edge = 0.0;
  double loss_total = 0.0;
  int attr_targets = 0;
  int edge_pairs = 0;
};

struct EpochStats {
  int epoch = 0;
  double loss_attr = 0.0;
  double loss_edge = 0.0;
  double loss_total = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  std::size_t queue_fill = 0;
};

/// Mutable training state for one pre-training run.
class Pretrainer {
 public:
  Pretrainer(const AttributedGraph& graph, PretrainConfig cfg, std::uint64_t seed);

  /// One sampled batch per step: sample, permute, mask, separate, encode,
  /// loss, backward, AdamW, queue update.
  EpochStats run_epoch();
  /// All epochs; afterwards params() hold the best-validation snapshot.
  std::vector<EpochStats> run(const std::function<void(const EpochStats&)>& on_epoch = {});

  /// Loss of one batch without updating anything; used for validation and
  /// tests. With `queue` set it is read as negatives.
  BatchResult evaluate_batch(const SampledSubgraph& sg, Rng& rng, const AdaptiveQueue* queue) const;
  /// Forward, backward and update on a given batch.
  BatchResult train_batch(const SampledSubgraph& sg, Rng& rng, float lr);

  ParameterStore& params() { return model_.params; }
  const ParameterStore& params() const { return model_.params; }
  const PretrainModel& model() const { return model_; }
  const AdaptiveQueue& queue() const { return queue_; }
  const PretrainConfig& config() const { return cfg_; }
  long total_steps() const { return static_cast<long>(cfg_.epochs) * cfg_.batches_per_epoch; }

 private:
  struct Forward;
  Forward forward(Tape& tape, ParameterStore& params, const SampledSubgraph& sg, Rng& rng, bool training,
                  const AdaptiveQueue* queue) const;
  SampledSubgraph sample(std::uint64_t seed) const;

  const AttributedGraph& graph_;
  PretrainConfig cfg_;
  std::uint64_t seed_;
  PretrainModel model_;
  AdamW optimizer_;
  AdaptiveQueue queue_;
  int epoch_ = 0;
  long step_ = 0;
  std::vector<SampledSubgraph> val_batches_;
  double best_val_ = 0.0;
  std::optional<ParameterStore> best_;
};

}  // namespace gptgnn
