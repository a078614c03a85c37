#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "motarfuse/random.hpp"
#include "motarfuse/tape.hpp"
#include "motarfuse/tensor.hpp"

namespace motarfuse {

struct ParamId {
  int index = -1;
  bool valid() const { return index >= 0; }
};

struct Parameter {
  std::string name;
  Tensor value;  // value.grad() accumulates training gradients
};

// Ordered, named collection of trainable tensors.
class ParameterSet {
 public:
  ParamId add(std::string name, Tensor init);
  ParamId add_normal(std::string name, Shape shape, double stddev, Rng& rng);
  ParamId add_constant(std::string name, Shape shape, double value);

  Tensor& value(ParamId id) { return entries_.at(static_cast<std::size_t>(id.index)).value; }
  const Tensor& value(ParamId id) const { return entries_.at(static_cast<std::size_t>(id.index)).value; }
  const std::string& name(ParamId id) const { return entries_.at(static_cast<std::size_t>(id.index)).name; }
  std::optional<ParamId> find(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;
  std::vector<Parameter>& entries() { return entries_; }
  const std::vector<Parameter>& entries() const { return entries_; }
  void zero_grad();

 private:
  std::vector<Parameter> entries_;
  std::map<std::string, int> index_;
};

// Lazily places parameters on a tape. Each parameter is copied onto the tape
// at most once per binder.
class Binder {
 public:
  Binder(Tape& tape, const ParameterSet& params, bool trainable = true);

  Var operator()(ParamId id);
  Tape& tape() { return *tape_; }
  const ParameterSet& params() const { return *params_; }

  // Adds the tape gradients of every bound parameter into params[i].value.grad().
  void accumulate_grads(ParameterSet& params) const;

 private:
  Tape* tape_;
  const ParameterSet* params_;
  bool trainable_;
  std::vector<int> bound_;
};

}  // namespace motarfuse
