#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gptgnn/graph.hpp"
#include "gptgnn/rng.hpp"

namespace gptgnn {

enum class FieldMode {
  Block,  // field = block % num_fields
  Node,   // field drawn uniformly per node
};

std::string to_string(FieldMode m);
FieldMode parse_field_mode(const std::string& s);

/// Stochastic block model with block-dependent attributes. Node type 0 is
/// "paper" with symmetric "cites" edges. With authors_per_block > 0 a second
/// type "author" is added with directed "writes" edges author -> paper.
struct SbmAttrConfig {
  int num_blocks = 8;
  int nodes_per_block = 60;
  double p_in = 0.1;
  double p_out = 0.01;
  int attr_dim = 16;
  double attr_signal = 0.7;
  // Standard deviation of the noise norm relative to a unit centroid.
  double noise_scale = 1.0;
  int num_epochs = 5;
  int num_fields = 3;
  FieldMode field_mode = FieldMode::Node;

  int authors_per_block = 0;
  int author_dim = 8;
  double p_write_in = 0.05;
  double p_write_out = 0.005;

  std::uint64_t seed = 1;

  void validate() const;
  bool operator==(const SbmAttrConfig&) const = default;
};

/// Attributes are attr_signal * centroid + (1 - attr_signal) * noise, scaled
/// to unit norm. Class label is the block; time is uniform over epochs.
AttributedGraph generate(const SbmAttrConfig& cfg);

/// Newman modularity of the undirected graph over the given node labels.
/// Each stored edge pair counts once.
double modularity(const AttributedGraph& g, std::span<const int> labels);

/// Accuracy of a nearest-centroid classifier fit on a random half of the rows
/// and scored on the other half.
double probe_accuracy(const std::vector<std::vector<float>>& x, std::span<const int> labels, Rng& rng);

}  // namespace gptgnn
