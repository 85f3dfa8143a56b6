#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gptgnn/run_config.hpp"

namespace gptgnn {

/// One row of an ablation: how (and whether) the encoder is pre-trained.
struct VariantSpec {
  std::string name;
  bool pretrain = true;
  Objective objective = Objective::Full;
  bool node_separation = true;
  bool queue = true;
};

VariantSpec variant_spec(const std::string& name);

/// The configured synthetic graph; its seed is derived from the master seed.
AttributedGraph make_graph(const RunConfig& cfg);

/// Seed of repetition k, derived from the master seed.
std::uint64_t run_seed(const RunConfig& cfg, int k);

PretrainConfig pretrain_config_for(const RunConfig& cfg, const VariantSpec& v);

/// Pre-trains on the split's pre-training region and returns the selected
/// parameters; nullopt for variants without pre-training.
std::optional<ParameterStore> pretrain_variant(const AttributedGraph& g, const TransferSplit& split,
                                               const RunConfig& cfg, const VariantSpec& v, std::uint64_t seed,
                                               std::vector<EpochStats>* history = nullptr);

struct RunResult {
  std::string variant;
  int seed_index = 0;
  std::uint64_t seed = 0;
  double label_fraction = 0.0;
  bool pretrained = false;
  std::string metric;
  double value = 0.0;
  int best_epoch = 0;
};

Task task_for(const RunConfig& cfg, const AttributedGraph& g);

RunResult finetune_variant(const AttributedGraph& g, const TransferSplit& split, const RunConfig& cfg,
                           const VariantSpec& v, const ParameterStore* pretrained, int seed_index);

/// Every configured variant for every seed, ordered by variant then seed.
/// Runs in parallel up to `threads`; results do not depend on the count.
std::vector<RunResult> run_ablation(const RunConfig& cfg, int threads,
                                    const std::function<void(const RunResult&)>& on_result = {});

/// Worker count from GPTGNN_THREADS (default 1).
int thread_budget();

}  // namespace gptgnn
