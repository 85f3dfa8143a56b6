#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gptgnn/autodiff.hpp"
#include "gptgnn/graph.hpp"
#include "gptgnn/layers.hpp"
#include "gptgnn/optim.hpp"

namespace gptgnn {

enum class TransferKind { Time, Field, TimeField };

std::string to_string(TransferKind k);
TransferKind parse_transfer_kind(const std::string& s);

struct SplitSpec {
  TransferKind kind = TransferKind::TimeField;
  // Pre-training uses time < boundary_time; fine-tuning time >= boundary_time.
  int boundary_time = 2;
  // Fine-tuning labels: train time < val_time <= validation < test_time <= test.
  int val_time = 3;
  int test_time = 4;
  // Fields reserved for fine-tuning.
  std::vector<int> held_fields{0};
  double label_fraction = 0.1;
  NodeTypeId target_type = 0;

  void validate() const;
  bool operator==(const SplitSpec&) const = default;
};

/// Node sets in the indices of the source graph, each ascending.
struct TransferSplit {
  std::vector<NodeIndex> pretrain_nodes;
  std::vector<NodeIndex> finetune_nodes;
  // Labeled target-type fine-tuning nodes before label_fraction subsampling.
  std::vector<NodeIndex> train_all;
  std::vector<NodeIndex> train;
  std::vector<NodeIndex> val;
  std::vector<NodeIndex> test;
};

bool in_pretrain_region(const SplitSpec& spec, const NodeMeta& m);
bool in_finetune_region(const SplitSpec& spec, const NodeMeta& m);

/// Nodes with time and field metadata are assigned by the predicates; other
/// nodes join each region they have an edge into. The training labels are a
/// nested prefix of a seeded shuffle, so larger fractions add labels.
TransferSplit make_split(const AttributedGraph& g, const SplitSpec& spec, std::uint64_t seed);

enum class TaskKind { NodeClass, LinkPred };

std::string to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

struct Task {
  TaskKind kind = TaskKind::NodeClass;
  // Link prediction: predicted edge type; edges are split by the later
  // endpoint time with the same boundaries as node labels.
  EdgeTypeId link_type = 0;
};

struct FinetuneConfig {
  int epochs = 50;
  float lr_max = 5e-3f;
  float lr_min = 1e-4f;
  AdamWConfig adamw;

  void validate() const;
  bool operator==(const FinetuneConfig&) const = default;
};

struct FinetuneEpoch {
  int epoch = 0;
  double loss = 0.0;
  double train_metric = 0.0;
  double val_metric = 0.0;
  double test_metric = 0.0;
};

struct FinetuneResult {
  std::vector<FinetuneEpoch> history;
  // Epoch with the best validation metric (earliest on ties); 0 is the
  // initialization before any update.
  int best_epoch = 0;
  double val_metric = 0.0;
  double test_metric = 0.0;
  ParameterStore params;
};

/// Copies every `gnn.` parameter from `pretrained` into `params`. Missing or
/// differently shaped parameters are reported together.
void load_encoder(ParameterStore& params, const ParameterStore& pretrained);

/// Fine-tunes an encoder with a fresh task head on the fine-tuning region.
/// With `pretrained` null the encoder starts from a seeded random
/// initialization. Returns the best-validation snapshot.
FinetuneResult finetune(const AttributedGraph& g, const TransferSplit& split, const LayerConfig& layer,
                        const ParameterStore* pretrained, const Task& task, const FinetuneConfig& cfg,
                        std::uint64_t seed);

}  // namespace gptgnn
