#include "motarfuse/params.hpp"

#include "motarfuse/error.hpp"

namespace motarfuse {

ParamId ParameterSet::add(std::string name, Tensor init) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  const int idx = static_cast<int>(entries_.size());
  index_.emplace(name, idx);
  init.set_requires_grad(true);
  entries_.push_back(Parameter{std::move(name), std::move(init)});
  return ParamId{idx};
}

ParamId ParameterSet::add_normal(std::string name, Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return add(std::move(name), std::move(t));
}

ParamId ParameterSet::add_constant(std::string name, Shape shape, double value) {
  return add(std::move(name), Tensor(std::move(shape), value));
}

std::optional<ParamId> ParameterSet::find(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) return std::nullopt;
  return ParamId{it->second};
}

std::size_t ParameterSet::total_elements() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

Binder::Binder(Tape& tape, const ParameterSet& params, bool trainable)
    : tape_(&tape), params_(&params), trainable_(trainable), bound_(params.size(), -1) {}

Var Binder::operator()(ParamId id) {
  if (!id.valid() || static_cast<std::size_t>(id.index) >= bound_.size()) {
    throw ContractError("Binder: unknown parameter id");
  }
  int& slot = bound_[static_cast<std::size_t>(id.index)];
  if (slot < 0) {
    const Tensor& v = params_->value(id);
    slot = (trainable_ ? tape_->variable(v) : tape_->constant(v)).id;
  }
  return Var{tape_, slot};
}

void Binder::accumulate_grads(ParameterSet& params) const {
  for (std::size_t i = 0; i < bound_.size(); ++i) {
    const int slot = bound_[i];
    if (slot < 0 || !tape_->has_grad(slot)) continue;
    const auto& g = tape_->value(slot).grad();
    auto& dst = params.entries()[i].value.grad();
    for (std::size_t j = 0; j < g.size(); ++j) dst[j] += g[j];
  }
}

}  // namespace motarfuse
