// SPDX-License-Identifier: Apache-2.0
#include "hialign/autodiff.hpp"

#include <atomic>

#include "hialign/errors.hpp"

namespace hialign {

namespace {
std::atomic<bool> g_nan_check{false};
}

Parameter& ParameterStore::add(const std::string& name, Tensor value, bool trainable) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  names_.push_back(name);
  params_.push_back(Parameter{std::move(value), trainable, false});
  return params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("unknown parameter '" + name + "'");
  return params_[it->second];
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (p.receives_grad()) n += p.value.numel();
  return n;
}

void ParameterStore::set_frozen(const std::string& prefix, bool frozen) {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i].starts_with(prefix)) params_[i].frozen = frozen;
}

void ParameterStore::erase_prefix(const std::string& prefix) {
  std::vector<std::string> names;
  std::vector<Parameter> params;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i].starts_with(prefix)) continue;
    names.push_back(std::move(names_[i]));
    params.push_back(std::move(params_[i]));
  }
  names_ = std::move(names);
  params_ = std::move(params);
  index_.clear();
  for (std::size_t i = 0; i < names_.size(); ++i) index_.emplace(names_[i], i);
}

bool operator==(const ParameterStore& a, const ParameterStore& b) {
  if (a.names_ != b.names_) return false;
  for (std::size_t i = 0; i < a.params_.size(); ++i) {
    const auto& x = a.params_[i];
    const auto& y = b.params_[i];
    if (!(x.value == y.value) || x.trainable != y.trainable || x.frozen != y.frozen) return false;
  }
  return true;
}

const Tensor& Var::value() const { return tape->value(id); }

const Tensor& GradSink::input(std::size_t k) const { return tape_.nodes_[tape_.nodes_[node_].inputs[k]].value; }

const Tensor& GradSink::output() const { return tape_.nodes_[node_].value; }

Tensor* GradSink::grad(std::size_t k) {
  const std::size_t id = tape_.nodes_[node_].inputs[k];
  if (!tape_.nodes_[id].requires_grad) return nullptr;
  auto& slot = tape_.grads_[id];
  if (!slot) slot = Tensor::zeros_like(tape_.nodes_[id].value);
  return &*slot;
}

void Tape::set_nan_check(bool enabled) { g_nan_check = enabled; }
bool Tape::nan_check() { return g_nan_check; }

Var Tape::push(Node node) {
  if (g_nan_check && !node.value.all_finite()) {
    throw NumericError("non-finite value recorded at tape entry " + std::to_string(nodes_.size()) + " shape " +
                       shape_str(node.value.shape()));
  }
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) { return push(Node{std::move(value), {}, {}, false}); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  return push(Node{std::move(value), {}, {}, requires_grad && grad_enabled_});
}

Var Tape::param(const ParameterStore& store, const std::string& name) {
  auto it = param_ids_.find(name);
  if (it != param_ids_.end()) return Var{this, it->second};
  const auto& p = store.get(name);
  Var v = leaf(p.value, p.receives_grad());
  param_ids_.emplace(name, v.id);
  return v;
}

Var Tape::record(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.inputs.reserve(inputs.size());
  bool needs = false;
  for (const auto& v : inputs) {
    if (v.tape != this) throw ContractError("tape entry input recorded on a different tape");
    node.inputs.push_back(v.id);
    needs = needs || nodes_[v.id].requires_grad;
  }
  node.requires_grad = needs && grad_enabled_;
  if (node.requires_grad) node.backward = std::move(backward);
  return push(std::move(node));
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("loss recorded on a different tape");
  const auto& lv = nodes_[loss.id].value;
  if (lv.numel() != 1) throw ContractError("backward needs a scalar loss, got shape " + shape_str(lv.shape()));
  grads_.assign(nodes_.size(), std::nullopt);
  if (!nodes_[loss.id].requires_grad) return;
  grads_[loss.id] = Tensor(lv.shape(), 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!grads_[i] || !node.backward) continue;
    GradSink sink(*this, i);
    node.backward(*grads_[i], sink);
  }
}

Tensor Tape::grad(Var v) const {
  if (v.id < grads_.size() && grads_[v.id]) return *grads_[v.id];
  return Tensor::zeros_like(nodes_[v.id].value);
}

Gradients Tape::param_grads(const ParameterStore& store) const {
  Gradients out;
  for (const auto& [name, id] : param_ids_) {
    if (store.contains(name) && store.get(name).receives_grad() && id < grads_.size() && grads_[id]) {
      out.emplace(name, *grads_[id]);
    } else {
      out.emplace(name, Tensor::zeros_like(nodes_[id].value));
    }
  }
  return out;
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  param_ids_.clear();
}

}  // namespace hialign
