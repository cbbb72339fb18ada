#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hvfcast/tensor.hpp"

namespace hvfcast::nn {

enum class Mode { train, infer };
enum class Activation { linear, relu };

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value
};

// Named trainable arrays in insertion order. Names are unique; references
// returned by add() stay valid as more parameters are added.
class ParamSet {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::deque<Parameter>& entries() { return entries_; }
  const std::deque<Parameter>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;
  void zero_grad();

 private:
  std::deque<Parameter> entries_;
  std::map<std::string, std::size_t> index_;
};

// Per-channel running statistics of one batch-normalization layer. The
// trainable gamma/beta live in the owning ParamSet.
struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.99;
  double epsilon = 1e-5;

  explicit BatchNormState(std::size_t channels = 0);
  std::size_t channels() const { return running_mean.size(); }
};

class Tape;

// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records a forward computation and replays it backwards. Nodes are
// appended in evaluation order, so reverse order is a valid topological
// order; backward runs single-threaded in that fixed order.
class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t self)>;

  Var constant(Tensor value);
  // Leaf bound to a parameter; backward() accumulates into param.grad.
  Var parameter(Parameter& param);
  Var push(Tensor value, std::vector<std::size_t> parents, Backward backward);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Gradient buffer of a node, allocated (zeroed) on first access.
  Tensor& grad(std::size_t id);
  const std::vector<std::size_t>& parents(std::size_t id) const { return nodes_[id].parents; }

  // Seeds d(loss)/d(loss) = 1 for a scalar node and propagates.
  void backward(Var loss);

  // Signs of every kink argument seen so far (relu inputs, MAE residuals).
  // Two evaluations with equal signatures lie on the same smooth piece.
  void record_kinks(std::span<const double> args);
  const std::vector<std::int8_t>& kink_signature() const { return kinks_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    Backward backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };
  std::vector<Node> nodes_;
  std::vector<std::int8_t> kinks_;
};

// Layer primitives. Each registers an exact backward rule.

// 'Same' padding, stride 1, odd square kernel (C_out, C_in, k, k).
Var conv2d(Var x, Var weight, Var bias, Activation act = Activation::linear);
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode);
// x: (N, in), weight: (out, in), bias: (out).
Var dense(Var x, Var weight, Var bias, Activation act = Activation::linear);
Var relu(Var x);
Var add(Var a, Var b);
Var mul(Var a, Var b);  // elementwise, equal shapes
Var sum(Var x);         // scalar of shape {1}
Var concat_channels(std::span<const Var> xs);
Var reshape(Var x, Shape shape);

// mask: H*W flags shared by every plane, or one flag per element.
// Throws on empty mask.
Var masked_mae(Var pred, const Tensor& target, const std::vector<bool>& mask);
// Loss value without building a graph.
double masked_mae_value(const Tensor& pred, const Tensor& target, const std::vector<bool>& mask);

}  // namespace hvfcast::nn
