#include "gptgnn/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <functional>
#include <sstream>

#include "gptgnn/errors.hpp"

#ifndef GPTGNN_VERSION
#define GPTGNN_VERSION "0.0.0"
#endif

namespace gptgnn {

namespace {

template <typename T>
std::string num(T v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_num(const std::string& key, const std::string& s) {
  T v{};
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size())
    throw ConfigError(key, "cannot parse '" + s + "' as a number");
  return v;
}

bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(key, "expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ','))
    if (!cur.empty()) out.push_back(cur);
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t k = 0; k < v.size(); ++k) out += (k ? "," : "") + v[k];
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

#define NUM_FIELD(name, expr)                                                        \
  Field {                                                                            \
    name, [](const RunConfig& c) { return num(c.expr); },                            \
        [](RunConfig& c, const std::string& v) { c.expr = parse_num<decltype(c.expr)>(name, v); } \
  }
#define BOOL_FIELD(name, expr)                                                   \
  Field {                                                                        \
    name, [](const RunConfig& c) { return std::string(c.expr ? "true" : "false"); }, \
        [](RunConfig& c, const std::string& v) { c.expr = parse_bool(name, v); } \
  }
#define STR_FIELD(name, expr) \
  Field { name, [](const RunConfig& c) { return c.expr; }, [](RunConfig& c, const std::string& v) { c.expr = v; } }
#define ENUM_FIELD(name, expr, parse)                                 \
  Field {                                                             \
    name, [](const RunConfig& c) { return to_string(c.expr); },       \
        [](RunConfig& c, const std::string& v) { c.expr = parse(v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      STR_FIELD("preset", preset),
      NUM_FIELD("seed", seed),
      NUM_FIELD("num_seeds", num_seeds),
      // data
      NUM_FIELD("num_blocks", data.num_blocks),
      NUM_FIELD("nodes_per_block", data.nodes_per_block),
      NUM_FIELD("p_in", data.p_in),
      NUM_FIELD("p_out", data.p_out),
      NUM_FIELD("attr_dim", data.attr_dim),
      NUM_FIELD("attr_signal", data.attr_signal),
      NUM_FIELD("noise_scale", data.noise_scale),
      NUM_FIELD("num_epochs", data.num_epochs),
      NUM_FIELD("num_fields", data.num_fields),
      ENUM_FIELD("field_mode", data.field_mode, parse_field_mode),
      NUM_FIELD("authors_per_block", data.authors_per_block),
      NUM_FIELD("author_dim", data.author_dim),
      NUM_FIELD("p_write_in", data.p_write_in),
      NUM_FIELD("p_write_out", data.p_write_out),
      // encoder
      NUM_FIELD("hidden", pretrain.layer.hidden_dim),
      NUM_FIELD("heads", pretrain.layer.num_heads),
      NUM_FIELD("layers", pretrain.layer.num_layers),
      ENUM_FIELD("layer_kind", pretrain.layer.kind, parse_layer_kind),
      NUM_FIELD("dropout", pretrain.layer.dropout),
      // sampler
      NUM_FIELD("nodes_per_layer", pretrain.budget.nodes_per_layer_per_type),
      NUM_FIELD("sample_layers", pretrain.budget.num_layers_sampled),
      NUM_FIELD("seed_count", pretrain.budget.seed_count),
      // pre-training
      ENUM_FIELD("permutation", pretrain.permutation, parse_permutation_mode),
      NUM_FIELD("edge_mask_ratio", pretrain.mask.edge_mask_ratio),
      NUM_FIELD("attr_target_ratio", pretrain.mask.attr_target_ratio),
      ENUM_FIELD("objective", pretrain.objective, parse_objective),
      BOOL_FIELD("node_separation", pretrain.node_separation),
      NUM_FIELD("edge_weight", pretrain.edge_weight),
      NUM_FIELD("queue_capacity", pretrain.queue_capacity),
      NUM_FIELD("pretrain_epochs", pretrain.epochs),
      NUM_FIELD("batches_per_epoch", pretrain.batches_per_epoch),
      NUM_FIELD("pretrain_val_batches", pretrain.val_batches),
      NUM_FIELD("lr_max", pretrain.lr_max),
      NUM_FIELD("lr_min", pretrain.lr_min),
      NUM_FIELD("weight_decay", pretrain.adamw.weight_decay),
      // fine-tuning
      ENUM_FIELD("task", task, parse_task_kind),
      STR_FIELD("link_type", link_type),
      ENUM_FIELD("transfer", split.kind, parse_transfer_kind),
      NUM_FIELD("boundary_time", split.boundary_time),
      NUM_FIELD("val_time", split.val_time),
      NUM_FIELD("test_time", split.test_time),
      Field{"held_fields",
            [](const RunConfig& c) {
              std::vector<std::string> v;
              for (int f : c.split.held_fields) v.push_back(num(f));
              return join(v);
            },
            [](RunConfig& c, const std::string& v) {
              c.split.held_fields.clear();
              for (const auto& s : split_list(v)) c.split.held_fields.push_back(parse_num<int>("held_fields", s));
            }},
      NUM_FIELD("label_fraction", split.label_fraction),
      NUM_FIELD("target_type", split.target_type),
      NUM_FIELD("finetune_epochs", finetune.epochs),
      NUM_FIELD("finetune_lr_max", finetune.lr_max),
      NUM_FIELD("finetune_lr_min", finetune.lr_min),
      NUM_FIELD("finetune_weight_decay", finetune.adamw.weight_decay),
      Field{"variants", [](const RunConfig& c) { return join(c.variants); },
            [](RunConfig& c, const std::string& v) { c.variants = split_list(v); }},
      STR_FIELD("init", init),
      // paths
      STR_FIELD("graph_dir", graph_dir),
      STR_FIELD("checkpoint", checkpoint),
      STR_FIELD("pretrain_log", pretrain_log),
      STR_FIELD("results", results),
      STR_FIELD("summary", summary),
      STR_FIELD("table", table),
  };
  return f;
}

#undef NUM_FIELD
#undef BOOL_FIELD
#undef STR_FIELD
#undef ENUM_FIELD

}  // namespace

const std::vector<std::string>& all_variants() {
  static const std::vector<std::string> v = {"gpt-gnn", "attr-only", "edge-only", "gae",
                                             "no-pretrain", "attr-no-separation", "edge-no-queue"};
  return v;
}

void RunConfig::validate() const {
  if (preset != "desk" && preset != "paper") throw ConfigError("preset", "expected desk or paper, got '" + preset + "'");
  if (num_seeds <= 0) throw ConfigError("num_seeds", "must be positive");
  data.validate();
  pretrain.validate();
  split.validate();
  finetune.validate();
  if (link_type.empty()) throw ConfigError("link_type", "must not be empty");
  if (init != "pretrained" && init != "random")
    throw ConfigError("init", "expected pretrained or random, got '" + init + "'");
  for (const auto& v : variants)
    if (std::find(all_variants().begin(), all_variants().end(), v) == all_variants().end())
      throw ConfigError("variants", "unknown variant '" + v + "'");
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  c.variants = all_variants();
  c.data.authors_per_block = 20;
  if (name == "desk") {
    c.pretrain.layer.hidden_dim = 64;
    c.pretrain.layer.num_heads = 4;
    c.pretrain.layer.num_layers = 2;
    c.pretrain.epochs = 100;
    c.finetune.epochs = 50;
    c.pretrain.queue_capacity = 128;
    c.pretrain.batches_per_epoch = 8;
  } else if (name == "paper") {
    c.pretrain.layer.hidden_dim = 400;
    c.pretrain.layer.num_heads = 8;
    c.pretrain.layer.num_layers = 3;
    c.pretrain.epochs = 500;
    c.finetune.epochs = 200;
    c.pretrain.queue_capacity = 256;
    c.pretrain.batches_per_epoch = 32;
  } else {
    throw ConfigError("preset", "expected desk or paper, got '" + name + "'");
  }
  return c;
}

std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(c));
  return out;
}

std::string serialize(const RunConfig& c) {
  std::string out;
  for (const auto& [k, v] : config_entries(c)) out += k + " = " + v + "\n";
  return out;
}

void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (f.key == key) {
      f.set(c, value);
      return;
    }
  throw ConfigError(key, "unknown key");
}

namespace {

std::vector<std::pair<std::string, std::string>> parse_lines(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno), "expected 'key = value', got '" + t + "'");
    out.emplace_back(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return out;
}

}  // namespace

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  RunConfig c = base;
  for (const auto& [k, v] : parse_lines(text)) set_config_value(c, k, v);
  return c;
}

RunConfig resolve_config(const std::optional<std::string>& file_text,
                         const std::vector<std::pair<std::string, std::string>>& overrides) {
  const auto file = file_text ? parse_lines(*file_text) : std::vector<std::pair<std::string, std::string>>{};
  std::string preset = "desk";
  for (const auto& [k, v] : file)
    if (k == "preset") preset = v;
  for (const auto& [k, v] : overrides)
    if (k == "preset") preset = v;
  RunConfig c = preset_config(preset);
  for (const auto& [k, v] : file) set_config_value(c, k, v);
  for (const auto& [k, v] : overrides) set_config_value(c, k, v);
  c.preset = preset;
  c.validate();
  return c;
}

std::string config_hash(const RunConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : serialize(c)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

const char* code_version() { return GPTGNN_VERSION; }

}  // namespace gptgnn
