#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gptgnn/datagen.hpp"
#include "gptgnn/finetune.hpp"
#include "gptgnn/pretrain.hpp"

namespace gptgnn {

/// Every setting of a run. Serialized as flat `key = value` lines.
struct RunConfig {
  std::string preset = "desk";
  std::uint64_t seed = 1;
  int num_seeds = 5;

  SbmAttrConfig data;  // data.seed is derived from `seed`
  PretrainConfig pretrain;
  SplitSpec split;
  FinetuneConfig finetune;
  TaskKind task = TaskKind::NodeClass;
  std::string link_type = "cites";
  std::vector<std::string> variants;
  // Fine-tuning start point: "pretrained" (from `checkpoint`) or "random".
  std::string init = "pretrained";

  std::string graph_dir = "graph";
  std::string checkpoint = "pretrained.ckpt";
  std::string pretrain_log = "pretrain.jsonl";
  std::string results = "results.jsonl";
  std::string summary = "summary.csv";
  std::string table = "ablation.csv";

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

/// "desk" (laptop scale) or "paper" (the published hyperparameters).
RunConfig preset_config(const std::string& name);

/// Ordered (key, value) pairs of every field.
std::vector<std::pair<std::string, std::string>> config_entries(const RunConfig& c);
std::string serialize(const RunConfig& c);

/// Sets one field from text; unknown keys and malformed values throw
/// ConfigError naming the key.
void set_config_value(RunConfig& c, const std::string& key, const std::string& value);

/// Applies `key = value` lines on top of `base`. Blank lines and lines
/// starting with '#' are skipped.
RunConfig parse_config(const std::string& text, const RunConfig& base);

/// Preset, then file, then overrides; the preset is taken from the overrides
/// if given there, else from the file, else "desk". The result is validated.
RunConfig resolve_config(const std::optional<std::string>& file_text,
                         const std::vector<std::pair<std::string, std::string>>& overrides);

/// 16 hex digits of FNV-1a over serialize(c).
std::string config_hash(const RunConfig& c);
const char* code_version();

/// All ablation variant names in table order.
const std::vector<std::string>& all_variants();

}  // namespace gptgnn
