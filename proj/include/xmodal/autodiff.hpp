#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmodal/tensor.hpp"

namespace xmodal {

/// A trainable tensor with its accumulated gradient. The gradient always
/// has the value's shape.
class Parameter {
 public:
  Parameter(std::string name, Tensor value);

  const std::string& name() const noexcept { return name_; }
  const Tensor& value() const noexcept { return value_; }
  Tensor& value() noexcept { return value_; }
  const Tensor& grad() const noexcept { return grad_; }
  Tensor& grad() noexcept { return grad_; }

  /// Replaces the value; the shape must not change.
  void assign(const Tensor& value);
  void zero_grad();

 private:
  std::string name_;
  Tensor value_;
  Tensor grad_;
};

/// Owns parameters in registration order. Names are unique and addresses
/// are stable for the lifetime of the set.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;
  ParameterSet(ParameterSet&&) = default;
  ParameterSet& operator=(ParameterSet&&) = default;

  Parameter& add(const std::string& name, Tensor value);
  Parameter* find(const std::string& name) noexcept;
  const Parameter* find(const std::string& name) const noexcept;
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;

  std::size_t count() const noexcept { return params_.size(); }
  std::size_t total_size() const noexcept;
  void zero_grad();

  auto begin() noexcept { return params_.begin(); }
  auto end() noexcept { return params_.end(); }
  auto begin() const noexcept { return params_.cbegin(); }
  auto end() const noexcept { return params_.cend(); }
  Parameter& operator[](std::size_t i) noexcept { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const noexcept { return *params_[i]; }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a value recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  /// Gradient after Tape::backward; empty if nothing flowed here.
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  explicit operator bool() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode recording. Nodes are appended in evaluation order, so a
/// reverse sweep visits every node after all of its consumers.
///
/// A tape created with `record = false` keeps values only; use it for
/// inference and finite-difference probes.
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  /// Leaf bound to `p`; gradients accumulate into p.grad(). Repeated calls
  /// for the same parameter return the same node.
  Var parameter(Parameter& p);

  /// Appends an op result. `backward` is dropped when no input needs a gradient.
  Var push(Tensor value, std::initializer_list<Var> inputs, Backward backward);
  Var push(Tensor value, std::span<const Var> inputs, Backward backward);

  void backward(Var root);

  bool recording() const noexcept { return record_; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  void accumulate(Var v, const Tensor& g);
  void accumulate(Var v, Tensor&& g);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    bool requires_grad = false;
  };

  bool record_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Differentiable ops. Every input Var must come from the same tape.

Var matmul(Var a, Var b);
/// a · bᵀ
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
/// Adds a length-d vector to every row of an n×d matrix.
Var add_bias(Var x, Var bias);
Var gelu(Var x);
Var reshape(Var x, Shape shape);

/// Row-wise softmax of an n×m matrix. `allowed`, when non-empty, is an n×m
/// row-major 0/1 mask: blocked entries get −1e9 before the softmax and are
/// rewritten to exactly 0 afterwards.
Var masked_softmax(Var scores, std::span<const std::uint8_t> allowed = {});
Var layer_norm(Var x, Var gain, Var bias, double eps);

/// Mean of −log softmax(logits)[target] over rows whose target differs from
/// `ignore_index`. Returns a {1} tensor.
Var cross_entropy(Var logits, std::span<const int> targets, std::optional<int> ignore_index = {});

/// Mean over all n·C entries of w·t·softplus(−z) + (1−t)·softplus(z).
Var binary_cross_entropy_with_weights(Var logits, const Tensor& targets, const Tensor& pos_weight);

/// Average of the first `valid_length` rows of an n×d matrix, shape {d}.
Var mean_pool(Var x, std::size_t valid_length);

Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var gather_rows(Var table, std::span<const int> ids);

}  // namespace xmodal
