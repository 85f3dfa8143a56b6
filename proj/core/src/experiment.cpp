#include "gptgnn/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <thread>

#include "gptgnn/errors.hpp"

namespace gptgnn {

VariantSpec variant_spec(const std::string& name) {
  VariantSpec v;
  v.name = name;
  if (name == "gpt-gnn") return v;
  if (name == "attr-only") {
    v.objective = Objective::AttrOnly;
  } else if (name == "edge-only") {
    v.objective = Objective::EdgeOnly;
  } else if (name == "gae") {
    v.objective = Objective::Gae;
    v.node_separation = false;
    v.queue = false;
  } else if (name == "no-pretrain") {
    v.pretrain = false;
  } else if (name == "attr-no-separation") {
    v.objective = Objective::AttrOnly;
    v.node_separation = false;
  } else if (name == "edge-no-queue") {
    v.objective = Objective::EdgeOnly;
    v.queue = false;
  } else {
    throw ConfigError("variants", "unknown variant '" + name + "'");
  }
  return v;
}

AttributedGraph make_graph(const RunConfig& cfg) {
  SbmAttrConfig d = cfg.data;
  d.seed = Rng::derive_seed(cfg.seed, "datagen");
  return generate(d);
}

std::uint64_t run_seed(const RunConfig& cfg, int k) {
  return Rng::derive_seed(cfg.seed, "run", static_cast<std::uint64_t>(k));
}

PretrainConfig pretrain_config_for(const RunConfig& cfg, const VariantSpec& v) {
  PretrainConfig p = cfg.pretrain;
  p.objective = v.objective;
  p.node_separation = v.node_separation;
  if (!v.queue) p.queue_capacity = 0;
  return p;
}

std::optional<ParameterStore> pretrain_variant(const AttributedGraph& g, const TransferSplit& split,
                                               const RunConfig& cfg, const VariantSpec& v, std::uint64_t seed,
                                               std::vector<EpochStats>* history) {
  if (!v.pretrain) return std::nullopt;
  const InducedSubgraph region = induced_subgraph(g, std::span<const NodeIndex>(split.pretrain_nodes));
  Pretrainer trainer(region.graph, pretrain_config_for(cfg, v), Rng::derive_seed(seed, "pretrain"));
  auto stats = trainer.run();
  if (history != nullptr) *history = std::move(stats);
  return trainer.params();
}

Task task_for(const RunConfig& cfg, const AttributedGraph& g) {
  Task t;
  t.kind = cfg.task;
  if (t.kind == TaskKind::LinkPred) {
    const auto r = g.types().find_edge_type(cfg.link_type);
    if (!r) throw ConfigError("link_type", "graph has no edge type '" + cfg.link_type + "'");
    t.link_type = *r;
  }
  return t;
}

RunResult finetune_variant(const AttributedGraph& g, const TransferSplit& split, const RunConfig& cfg,
                           const VariantSpec& v, const ParameterStore* pretrained, int seed_index) {
  const std::uint64_t seed = run_seed(cfg, seed_index);
  const FinetuneResult fr = finetune(g, split, cfg.pretrain.layer, pretrained, task_for(cfg, g), cfg.finetune,
                                     Rng::derive_seed(seed, "finetune"));
  RunResult r;
  r.variant = v.name;
  r.seed_index = seed_index;
  r.seed = seed;
  r.label_fraction = cfg.split.label_fraction;
  r.pretrained = pretrained != nullptr;
  r.metric = cfg.task == TaskKind::NodeClass ? "micro_f1" : "mrr";
  r.value = fr.test_metric;
  r.best_epoch = fr.best_epoch;
  return r;
}

std::vector<RunResult> run_ablation(const RunConfig& cfg, int threads,
                                    const std::function<void(const RunResult&)>& on_result) {
  cfg.validate();
  const AttributedGraph g = make_graph(cfg);
  const auto& variants = cfg.variants.empty() ? all_variants() : cfg.variants;
  std::vector<TransferSplit> splits;
  for (int k = 0; k < cfg.num_seeds; ++k) splits.push_back(make_split(g, cfg.split, run_seed(cfg, k)));

  const std::size_t jobs = variants.size() * static_cast<std::size_t>(cfg.num_seeds);
  std::vector<RunResult> out(jobs);
  std::vector<char> done(jobs, 0);
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t reported = 0;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      const std::size_t j = next++;
      if (j >= jobs) return;
      try {
        const VariantSpec v = variant_spec(variants[j / cfg.num_seeds]);
        const int k = static_cast<int>(j % cfg.num_seeds);
        const auto params = pretrain_variant(g, splits[k], cfg, v, run_seed(cfg, k));
        RunResult r = finetune_variant(g, splits[k], cfg, v, params ? &*params : nullptr, k);
        std::lock_guard lock(mu);
        out[j] = std::move(r);
        done[j] = 1;
        // Report in job order regardless of completion order.
        while (reported < jobs && done[reported]) {
          if (on_result) on_result(out[reported]);
          ++reported;
        }
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        next = jobs;
        return;
      }
    }
  };

  const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs)));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

int thread_budget() {
  const char* s = std::getenv("GPTGNN_THREADS");
  if (s == nullptr) return 1;
  const int n = std::atoi(s);
  return n > 0 ? n : 1;
}

}  // namespace gptgnn
