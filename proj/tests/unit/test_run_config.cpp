#include <set>

#include "doctest.h"
#include "gptgnn/errors.hpp"
#include "gptgnn/experiment.hpp"
#include "gptgnn/run_config.hpp"

using namespace gptgnn;

namespace {

std::string field_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("desk preset") {
  const auto c = preset_config("desk");
  CHECK(c.pretrain.layer.hidden_dim == 64);
  CHECK(c.pretrain.layer.num_heads == 4);
  CHECK(c.pretrain.layer.num_layers == 2);
  CHECK(c.pretrain.epochs == 100);
  CHECK(c.finetune.epochs == 50);
  CHECK(c.pretrain.queue_capacity == 128);
  CHECK(c.pretrain.batches_per_epoch == 8);
  CHECK(c.num_seeds == 5);
  CHECK(c.split.label_fraction == 0.1);
  CHECK(c.variants == all_variants());
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("published preset") {
  const auto c = preset_config("paper");
  CHECK(c.pretrain.layer.hidden_dim == 400);
  CHECK(c.pretrain.layer.num_heads == 8);
  CHECK(c.pretrain.layer.num_layers == 3);
  CHECK(c.pretrain.epochs == 500);
  CHECK(c.finetune.epochs == 200);
  CHECK(c.pretrain.queue_capacity == 256);
  CHECK(c.pretrain.batches_per_epoch == 32);
  CHECK_THROWS_AS(preset_config("laptop"), ConfigError);
}

TEST_CASE("serialization round-trips") {
  for (const auto* name : {"desk", "paper"}) {
    const auto c = preset_config(name);
    CHECK(parse_config(serialize(c), RunConfig{}) == c);
  }
  RunConfig c = preset_config("desk");
  c.data.p_in = 0.123456789;
  c.pretrain.lr_max = 3.3e-4f;
  c.split.held_fields = {0, 2};
  c.split.kind = TransferKind::Field;
  c.pretrain.node_separation = false;
  c.variants = {"gae", "no-pretrain"};
  c.results = "out/a b.jsonl";
  CHECK(parse_config(serialize(c), RunConfig{}) == c);
  // Every field appears once.
  std::set<std::string> keys;
  for (const auto& [k, v] : config_entries(c)) CHECK(keys.insert(k).second);
}

TEST_CASE("command line beats file beats preset") {
  const std::string file = "# comment\n\npreset = desk\nhidden = 32\nheads = 2\nseed = 9\n";
  const auto c = resolve_config(file, {{"hidden", "16"}});
  CHECK(c.pretrain.layer.hidden_dim == 16);
  CHECK(c.pretrain.layer.num_heads == 2);
  CHECK(c.seed == 9);
  CHECK(c.pretrain.epochs == 100);

  const auto p = resolve_config("preset = paper\n", {});
  CHECK(p.pretrain.layer.hidden_dim == 400);
  const auto q = resolve_config("preset = paper\n", {{"preset", "desk"}});
  CHECK(q.pretrain.layer.hidden_dim == 64);
  // Preset values do not override file values set before it.
  const auto r = resolve_config("hidden = 40\npreset = paper\n", {});
  CHECK(r.pretrain.layer.hidden_dim == 40);
}

TEST_CASE("errors name the offending field") {
  CHECK(field_of([] { resolve_config(std::nullopt, {{"hiden", "3"}}); }) == "hiden");
  CHECK(field_of([] { resolve_config(std::nullopt, {{"hidden", "abc"}}); }) == "hidden");
  CHECK(field_of([] { resolve_config(std::nullopt, {{"node_separation", "maybe"}}); }) == "node_separation");
  CHECK(field_of([] { resolve_config(std::nullopt, {{"transfer", "space"}}); }) == "transfer");
  CHECK(field_of([] { resolve_config(std::nullopt, {{"p_out", "0.5"}}); }) == "p_in");
  CHECK(field_of([] { resolve_config(std::nullopt, {{"variants", "gpt-gnn,bert"}}); }) == "variants");
  CHECK(field_of([] { resolve_config(std::nullopt, {{"num_seeds", "0"}}); }) == "num_seeds");
  CHECK(field_of([] { resolve_config("hidden 3\n", {}); }) == "line 1");
  CHECK(field_of([] { resolve_config(std::nullopt, {{"hidden", "64"}}); }) == "<no error>");
}

TEST_CASE("config hash") {
  const auto a = preset_config("desk");
  auto b = a;
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  b.seed = 2;
  CHECK(config_hash(a) != config_hash(b));
  CHECK(std::string(code_version()).size() > 0);
}

TEST_CASE("variants") {
  CHECK(all_variants().size() == 7);
  for (const auto& name : all_variants()) CHECK(variant_spec(name).name == name);
  CHECK_FALSE(variant_spec("no-pretrain").pretrain);
  CHECK(variant_spec("attr-no-separation").objective == Objective::AttrOnly);
  CHECK_FALSE(variant_spec("attr-no-separation").node_separation);
  CHECK_FALSE(variant_spec("edge-no-queue").queue);
  CHECK(variant_spec("gae").objective == Objective::Gae);
  CHECK_THROWS_AS(variant_spec("bert"), ConfigError);

  const auto c = preset_config("desk");
  CHECK(pretrain_config_for(c, variant_spec("edge-no-queue")).queue_capacity == 0);
  CHECK(pretrain_config_for(c, variant_spec("edge-only")).queue_capacity == 128);
  CHECK_FALSE(pretrain_config_for(c, variant_spec("attr-no-separation")).node_separation);
}

TEST_CASE("seeds derive from the master seed") {
  auto c = preset_config("desk");
  std::set<std::uint64_t> seeds;
  for (int k = 0; k < 5; ++k) seeds.insert(run_seed(c, k));
  CHECK(seeds.size() == 5);
  c.data.nodes_per_block = 10;
  c.data.authors_per_block = 2;
  CHECK(make_graph(c) == make_graph(c));
  auto d = c;
  d.seed = 2;
  CHECK_FALSE(make_graph(c) == make_graph(d));
}
