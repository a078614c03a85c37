#include "motarfuse/tape.hpp"

#include <atomic>

#include "motarfuse/error.hpp"

namespace motarfuse {

namespace {
std::atomic<std::uint64_t> next_tape_id{1};
}

const Tensor& Var::value() const {
  if (!valid()) throw ContractError("use of an unbound Var");
  return tape->value(id);
}

bool Var::requires_grad() const { return valid() && tape->requires_grad(id); }

std::vector<double> Var::grad() const {
  const Tensor& v = value();
  if (!tape->has_grad(id)) return std::vector<double>(v.numel(), 0.0);
  return v.grad();
}

Tape::Tape(bool record_gradients) : record_(record_gradients), id_(next_tape_id++) {}

Var Tape::push(Tensor value, bool requires_grad) {
  value.set_requires_grad(requires_grad);
  value.clear_grad();
  values_.push_back(std::move(value));
  return Var{this, static_cast<int>(values_.size() - 1)};
}

Var Tape::constant(Tensor value) { return push(std::move(value), false); }

Var Tape::variable(Tensor value) { return push(std::move(value), record_); }

bool Tape::any_requires_grad(const std::vector<Var>& inputs) const {
  for (const auto& in : inputs) {
    if (in.tape != this) throw ContractError("op mixes values from different tapes");
    if (requires_grad(in.id)) return true;
  }
  return false;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  const bool needs = record_ && any_requires_grad(inputs);
  Var out = push(std::move(value), needs);
  if (needs) {
    Node node;
    node.inputs.reserve(inputs.size());
    for (const auto& in : inputs) node.inputs.push_back(in.id);
    node.output = out.id;
    node.backward = std::move(backward);
    nodes_.push_back(std::move(node));
  }
  return out;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss was not produced on this tape");
  const Tensor& lv = value(loss.id);
  if (lv.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got shape " + shape_string(lv.shape()));
  }
  if (!requires_grad(loss.id)) throw ContractError("backward: loss does not depend on any variable");
  for (auto& v : values_) v.clear_grad();
  grad(loss.id)[0] = 1.0;
  last_visits_ = 0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->output > loss.id || !has_grad(it->output)) continue;
    it->backward(*this, it->output);
    ++last_visits_;
  }
}

}  // namespace motarfuse
