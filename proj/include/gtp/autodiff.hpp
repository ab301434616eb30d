#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "gtp/tensor.hpp"

namespace gtp {

class Tape;

/// Handle to a node on a Tape. Cheap to copy; only valid while its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Dims& dims() const { return value().dims(); }
  explicit operator bool() const noexcept { return tape != nullptr; }
};

/// Linear record of a forward computation. Nodes are appended in evaluation
/// order, so reverse insertion order is a valid topological order for the
/// backward sweep.
class Tape {
 public:
  /// Receives the gradient flowing into the node being differentiated.
  using Backward = std::function<void(Tape&, std::span<const double> out_grad, const Tensor& out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf whose gradient is added into `param.grad()` by backward().
  /// `param` must outlive the tape.
  Var parameter(Tensor& param);
  /// Generic operation node. The backward closure only runs when at least one
  /// input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var record(Tensor value, const std::vector<Var>& inputs, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient buffer of `v`, allocated zeroed on first access.
  std::span<double> grad(Var v);
  /// Empty span if no gradient reached `v`.
  std::span<const double> grad_view(Var v) const { return nodes_[v.id].grad; }

  /// Seeds d(root)/d(root) = 1 for a single-element root, sweeps backward and
  /// accumulates into every parameter's gradient.
  void backward(Var root);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    Tensor* param = nullptr;
    bool requires_grad = false;
    Backward backward;
  };

  Var push(Node node);

  std::vector<Node> nodes_;
};

/// Resolves parameter names to tape variables: trainable leaves when bound to
/// a mutable store, constants otherwise (inference on a shared network).
class ParamBinder {
 public:
  ParamBinder(Tape& tape, ParameterStore& store) : tape_(tape), mutable_(&store), store_(&store) {}
  ParamBinder(Tape& tape, const ParameterStore& store) : tape_(tape), store_(&store) {}

  Var operator()(const std::string& name) const {
    return mutable_ ? tape_.parameter(mutable_->get(name)) : tape_.constant(store_->get(name));
  }
  Tape& tape() const { return tape_; }
  bool trainable() const { return mutable_ != nullptr; }

 private:
  Tape& tape_;
  ParameterStore* mutable_ = nullptr;
  const ParameterStore* store_;
};

// Plain tensor kernels (no tape).

/// Standard matrix product of [m x k] by [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
/// Numerically stable softmax along `axis` of a tensor of any rank.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor sigmoid(const Tensor& x);
double sigmoid(double x);

// Differentiable operations.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// x[m x n] + bias[n] broadcast over rows.
Var add_bias(Var x, Var bias);
/// a * x + b elementwise.
Var affine(Var x, double a, double b);
/// x[m x n] * s[m x 1], row i scaled by s_i.
Var row_scale(Var x, Var s);
/// Horizontal concatenation of [m x n_i] matrices.
Var concat_cols(const std::vector<Var>& parts);
Var reshape(Var x, Dims dims);
/// Rows of `table` selected by `rows`, in that order; repeated rows allowed.
Var gather_rows(Var table, std::vector<std::size_t> rows);
Var sum(Var x);
Var relu(Var x);
Var sigmoid(Var x);
Var softmax(Var x, std::size_t axis);

/// 3x3 convolution, stride 1, zero padding 1.
/// x[b x c x h x w], weight[o x c x 3 x 3], bias[o] -> [b x o x h x w].
Var conv2d_3x3(Var x, Var weight, Var bias);
/// 2x2 average pooling, stride 2. Odd trailing rows/columns are dropped.
Var avg_pool_2x2(Var x);
/// [b x c x h x w] -> [b x c].
Var global_avg_pool(Var x);

}  // namespace gtp
