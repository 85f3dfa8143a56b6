#include <benchmark/benchmark.h>

#include "gptgnn/datagen.hpp"
#include "gptgnn/layers.hpp"
#include "gptgnn/pretrain.hpp"
#include "gptgnn/sampler.hpp"

using namespace gptgnn;

namespace {

Tensor random_matrix(Rng& rng, int rows, int cols) {
  Tensor t = Tensor::matrix(rows, cols);
  for (auto& v : t.values()) v = static_cast<float>(rng.normal());
  return t;
}

const AttributedGraph& desk_graph() {
  static const AttributedGraph g = [] {
    SbmAttrConfig c;
    c.authors_per_block = 20;
    return generate(c);
  }();
  return g;
}

LayerConfig desk_layer(LayerKind kind) {
  LayerConfig l;
  l.hidden_dim = 64;
  l.num_heads = 4;
  l.num_layers = 2;
  l.kind = kind;
  return l;
}

}  // namespace

// Forward and backward of an n x n product.
static void BM_Matmul(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  Rng rng(1);
  const Tensor a = random_matrix(rng, n, n), b = random_matrix(rng, n, n);
  for (auto _ : state) {
    Tape t;
    const Var y = ops::matmul(t, t.constant(a), t.leaf(b));
    t.backward(ops::sum_all(t, y));
    benchmark::DoNotOptimize(t.value(y).values().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * static_cast<std::int64_t>(n) * n * n);
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(64)->Arg(128);

// Full-graph encoding of the desk fixture.
static void BM_Encode(benchmark::State& state) {
  const auto& g = desk_graph();
  const auto kind = state.range(0) == 0 ? LayerKind::Mean : LayerKind::TypedAttention;
  GnnEncoder enc(desk_layer(kind), g.types());
  ParameterStore params;
  Rng rng(2);
  enc.init_params(params, rng);
  const MessageGraph mg = MessageGraph::from_graph(g);
  for (auto _ : state) {
    Tape t;
    const auto in = graph_inputs(t, g);
    const Var h = enc.encode(t, params, mg, in);
    benchmark::DoNotOptimize(t.value(h).values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(g.num_edges()));
}
BENCHMARK(BM_Encode)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

// Layer-wise importance sampling with the desk budget.
static void BM_Sample(benchmark::State& state) {
  const auto& g = desk_graph();
  SampleBudget b;
  b.nodes_per_layer_per_type = static_cast<int>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto sg = sample_subgraph(g, b, seed++);
    benchmark::DoNotOptimize(sg.num_nodes());
  }
}
BENCHMARK(BM_Sample)->Arg(16)->Arg(64);

// One pre-training step: sample, mask, separate, encode, both losses,
// backward and update.
static void BM_PretrainStep(benchmark::State& state) {
  const auto& g = desk_graph();
  PretrainConfig c;
  c.layer = desk_layer(LayerKind::TypedAttention);
  c.queue_capacity = 128;
  c.val_batches = 0;
  Pretrainer p(g, c, 3);
  std::uint64_t seed = 0;
  for (auto _ : state) {
    const auto sg = sample_subgraph(g, c.budget, seed);
    Rng rng(seed++);
    benchmark::DoNotOptimize(p.train_batch(sg, rng, 1e-4f).loss_total);
  }
}
BENCHMARK(BM_PretrainStep)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
