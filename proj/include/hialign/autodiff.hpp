// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "hialign/tensor.hpp"

namespace hialign {

// Named model parameters. Insertion order is preserved and defines the order of
// every serialized artifact.
//
// `trainable == false` marks values that are never optimized (frozen pretrained
// stand-ins, prototype banks, batch-norm running statistics). `frozen` is the
// per-phase switch the trainer flips between fine-tuning stages.
struct Parameter {
  Tensor value;
  bool trainable = true;
  bool frozen = false;

  bool receives_grad() const { return trainable && !frozen; }
};

class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor value, bool trainable = true);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  Tensor& value(const std::string& name) { return get(name).value; }
  const Tensor& value(const std::string& name) const { return get(name).value; }

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  // Number of scalar entries in parameters that currently receive gradients.
  std::size_t trainable_count() const;

  // Sets `frozen` on every parameter whose name starts with `prefix` ("" = all).
  void set_frozen(const std::string& prefix, bool frozen);
  // Removes every parameter whose name starts with `prefix`.
  void erase_prefix(const std::string& prefix);

  friend bool operator==(const ParameterStore& a, const ParameterStore& b);

 private:
  std::vector<std::string> names_;
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Gradients = std::map<std::string, Tensor>;

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  bool valid() const { return tape != nullptr; }
};

// View handed to a backward rule: the recorded inputs and output, and lazily
// allocated gradient accumulators for those inputs that need one.
class GradSink {
 public:
  GradSink(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
  const Tensor& input(std::size_t k) const;
  const Tensor& output() const;
  // nullptr when input k does not require a gradient.
  Tensor* grad(std::size_t k);

 private:
  Tape& tape_;
  std::size_t node_;
};

using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

// Linear record of primitive applications. Entries are appended in evaluation
// order, so the record is topologically sorted by construction and one reverse
// sweep suffices.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var leaf(Tensor value, bool requires_grad = true);
  // Binds a stored parameter as a leaf. Repeated calls with the same name return
  // the same node so uses across a batch accumulate into one gradient.
  Var param(const ParameterStore& store, const std::string& name);
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn backward);

  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }

  // Reverse sweep from a scalar loss.
  void backward(Var loss);
  // Gradient of a node after backward(); zeros when nothing flowed into it.
  Tensor grad(Var v) const;
  // Gradient for every parameter bound on this tape. Parameters that do not
  // receive gradients map to zero tensors.
  Gradients param_grads(const ParameterStore& store) const;

  std::size_t size() const { return nodes_.size(); }
  void reset();

  // When disabled, recorded nodes keep values but drop backward rules.
  void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
  bool grad_enabled() const { return grad_enabled_; }

  // Checks every recorded value for NaN/Inf and throws NumericError.
  static void set_nan_check(bool enabled);
  static bool nan_check();

 private:
  friend class GradSink;

  struct Node {
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Node node);

  std::deque<Node> nodes_;
  std::vector<std::optional<Tensor>> grads_;
  std::unordered_map<std::string, std::size_t> param_ids_;
  bool grad_enabled_ = true;
};

}  // namespace hialign
