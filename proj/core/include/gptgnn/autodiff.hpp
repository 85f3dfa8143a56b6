#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gptgnn/rng.hpp"
#include "gptgnn/tensor.hpp"

namespace gptgnn {

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor m1;  // AdamW first moment
  Tensor m2;  // AdamW second moment
};

enum class Init { Zeros, Glorot, Identity };

/// Named parameters in insertion order. References returned by add() stay
/// valid for the store's lifetime.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, int rows, int cols, Init init, Rng* rng = nullptr);
  Parameter& add(const std::string& name, Tensor value);

  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Parameter* find(const std::string& name);
  const Parameter* find(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const { return params_.size(); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad();
  std::size_t num_values() const;

 private:
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
};

using Index = std::vector<std::int32_t>;

/// Handle to a value recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

/// Append-only record of operations. backward() replays backward rules in
/// exact reverse recording order, accumulating into gradients.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor value);
  /// A differentiable input that is not a Parameter.
  Var leaf(Tensor value);
  /// Records the current value of p; backward() adds into p.grad.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of v after backward(); zeros when nothing flowed into v.
  Tensor grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  void backward(Var loss);

  // Used by primitives.
  Var record(Tensor value, std::initializer_list<Var> parents, Backward backward);
  Var record(Tensor value, std::span<const Var> parents, Backward backward);
  /// Gradient buffer of v, allocated as zeros on first use. Only valid for
  /// values that require gradients.
  Tensor& grad_buffer(Var v);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives. All inputs are rank-2 (rank-1 is treated as one row).

namespace ops {

Var matmul(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
/// a[n x m] + bias[1 x m] broadcast over rows.
Var add_row(Tape& t, Var a, Var bias);
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, float s);
/// Row r multiplied by the constant coeff[r].
Var scale_rows(Tape& t, Var a, std::vector<float> coeff);

Var row_gather(Tape& t, Var a, Index idx);
/// out[idx[k]] += a[k]; out has `rows` rows.
Var row_scatter_add(Tape& t, Var a, Index idx, int rows);

Var relu(Tape& t, Var a);
Var tanh(Tape& t, Var a);
Var exp(Tape& t, Var a);
Var log(Tape& t, Var a);

Var softmax_rows(Tape& t, Var a);
Var log_softmax_rows(Tape& t, Var a);

Var concat_rows(Tape& t, std::span<const Var> parts);
/// Mean over rows: [n x m] -> [1 x m].
Var mean_rows(Tape& t, Var a);
/// Sum over columns: [n x m] -> [n x 1].
Var row_sum(Tape& t, Var a);
Var sum_all(Tape& t, Var a);
Var mean_all(Tape& t, Var a);
/// Euclidean norm of each row: [n x m] -> [n x 1].
Var l2_norm_rows(Tape& t, Var a);

/// Softmax over the rows sharing a segment id, independently per column.
/// Entries may be -inf (masked) as long as each segment has a finite entry.
Var segment_softmax(Tape& t, Var scores, Index segment, int num_segments);
/// Max-stabilized log-sum-exp of a column vector per segment:
/// [m x 1] -> [num_segments x 1]. Every segment must be nonempty.
Var segment_logsumexp(Tape& t, Var scores, Index segment, int num_segments);

/// Per-head dot products of matching rows: a, b [e x d] -> [e x heads].
Var head_dot(Tape& t, Var a, Var b, int heads);
/// Scales head block h of row r by w(r, h): v [e x d], w [e x heads].
Var head_scale(Tape& t, Var v, Var w, int heads);
/// out[k] = dot(a[ia[k]], b[ib[k]]): [len x 1].
Var row_pair_dot(Tape& t, Var a, Var b, Index ia, Index ib);
/// out[r] = a(r, col[r]): [n x 1].
Var pick(Tape& t, Var a, Index col);

}  // namespace ops

}  // namespace gptgnn
