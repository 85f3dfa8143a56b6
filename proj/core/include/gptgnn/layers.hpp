#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gptgnn/autodiff.hpp"
#include "gptgnn/graph.hpp"
#include "gptgnn/rng.hpp"

namespace gptgnn {

enum class LayerKind { Mean, TypedAttention };

std::string to_string(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct LayerConfig {
  int hidden_dim = 64;
  int num_heads = 4;
  int num_layers = 2;
  LayerKind kind = LayerKind::TypedAttention;
  float dropout = 0.2f;

  /// Throws ConfigError on invalid combinations.
  void validate() const;
  bool operator==(const LayerConfig&) const = default;
};

struct MessageEdge {
  std::int32_t src = 0;
  std::int32_t dst = 0;
  EdgeTypeId type = 0;

  auto operator<=>(const MessageEdge&) const = default;
};

/// Directed computation graph over slots. Slots are positions in the
/// forward pass; one graph node may own several slots.
struct MessageGraph {
  int num_slots = 0;
  std::vector<NodeTypeId> slot_type;
  std::vector<MessageEdge> edges;  // self-messages are added by the encoder

  /// Every node's stored in-edges as messages, one slot per node.
  static MessageGraph from_graph(const AttributedGraph& g);
};

/// Input rows for one node type: features[k] feeds slot slots[k].
struct TypedInput {
  NodeTypeId type = 0;
  Var features;
  Index slots;
};

struct EncodeOptions {
  bool training = false;
  Rng* dropout_rng = nullptr;
  bool self_messages = true;
};

/// Attention weights recorded during a forward pass, one [E x heads] matrix
/// per layer over the compiled edge list (self-messages included).
struct EncodeTrace {
  std::vector<MessageEdge> edges;
  std::vector<Tensor> attention;
};

/// Stack of message-passing layers over a typed MessageGraph. Layer l maps
/// H^(l-1) to H^(l) by extracting a message per in-edge with an edge-type
/// specific map, aggregating messages per destination (mean, or multi-head
/// attention softmaxed over in-edges), then averaging with H^(l-1) and
/// applying tanh.
///
/// Parameters live in a ParameterStore under `gnn.`:
///   gnn.in.<node type>.W / .b        per-type input projection
///   gnn.l<k>.e<edge type>.W          mean layers
///   gnn.l<k>.e<edge type>.{K,Q,V}    attention layers
/// The self-message edge type id is types.num_edge_types().
class GnnEncoder {
 public:
  GnnEncoder(LayerConfig cfg, const TypeRegistry& types);

  const LayerConfig& config() const { return cfg_; }
  EdgeTypeId self_edge_type() const { return self_type_; }
  int num_message_types() const { return self_type_ + 1; }

  void init_params(ParameterStore& params, Rng& rng) const;
  /// Every map set to identity and biases to zero; used by tests.
  void init_identity(ParameterStore& params) const;

  /// Final-layer representations, one row per slot.
  Var encode(Tape& tape, ParameterStore& params, const MessageGraph& mg,
             std::span<const TypedInput> inputs, const EncodeOptions& opt = {},
             EncodeTrace* trace = nullptr) const;

  /// Per-in-edge, per-head attention weights of `layer` at dst_slot, in the
  /// order of the returned edges.
  std::pair<std::vector<MessageEdge>, Tensor> attention_weights(
      ParameterStore& params, const MessageGraph& mg, std::span<const TypedInput> inputs,
      Tape& tape, std::int32_t dst_slot, int layer = 0) const;

 private:
  LayerConfig cfg_;
  std::vector<int> input_dims_;
  EdgeTypeId self_type_;
};

/// Node-type feature matrices for a whole graph, one slot per node.
std::vector<TypedInput> graph_inputs(Tape& tape, const AttributedGraph& g);

}  // namespace gptgnn
