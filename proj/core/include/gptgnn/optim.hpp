#pragma once

#include <filesystem>
#include <span>
#include <string_view>
#include <string>
#include <vector>

#include "gptgnn/autodiff.hpp"

namespace gptgnn {

struct AdamWConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;

  bool operator==(const AdamWConfig&) const = default;
};

/// AdamW with decoupled weight decay: the decay shrinks the values directly
/// and never enters the moment estimates.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  /// One update of every parameter in `params` using its current gradient.
  /// Throws NumericalError if any gradient is not finite.
  void step(ParameterStore& params, float lr);

  long steps() const { return t_; }

 private:
  AdamWConfig cfg_;
  long t_ = 0;
};

/// Cosine annealing from lr_max at step 0 to lr_min at total_steps.
float cosine_lr(long step, long total_steps, float lr_max, float lr_min);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr const char* kCheckpointMagic = "GPTGNN-CKPT v1";

/// Writes every parameter value plus its AdamW moments (suffixes .m1/.m2).
/// `comments` become `# ` lines after the magic line.
void save_checkpoint(const ParameterStore& params, const std::filesystem::path& path,
                     const std::vector<std::string>& comments = {});

/// Raw checkpoint contents: name -> tensor, in file order.
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path);

/// Copies checkpoint values into the parameters whose names start with
/// `prefix_filter` (all when empty). Every selected parameter must be present with a matching
/// shape, otherwise IncompatibleCheckpoint lists the offenders. Moments are
/// restored when present.
void load_checkpoint(ParameterStore& params, const std::filesystem::path& path,
                     const std::string& prefix_filter = "");

std::string base64_encode(std::span<const unsigned char> bytes);
std::vector<unsigned char> base64_decode(std::string_view text);

}  // namespace gptgnn
