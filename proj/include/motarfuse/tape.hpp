#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <vector>

#include "motarfuse/tensor.hpp"

namespace motarfuse {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape is alive.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const;
  // Gradient after Tape::backward; zeros if the value did not influence the loss.
  std::vector<double> grad() const;
};

// Records operations in execution order for reverse-mode differentiation.
// A tape belongs to one thread for its whole lifetime.
class Tape {
 public:
  // Propagates d(output) into the inputs' gradient buffers.
  using BackwardFn = std::function<void(Tape&, int output)>;

  explicit Tape(bool record_gradients = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  Var variable(Tensor value);

  // Adds the result of an op. The backward rule is kept only when recording is
  // enabled and at least one input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  void backward(Var loss);

  const Tensor& value(int id) const { return values_[static_cast<std::size_t>(id)]; }
  bool requires_grad(int id) const { return values_[static_cast<std::size_t>(id)].requires_grad(); }
  bool has_grad(int id) const { return values_[static_cast<std::size_t>(id)].has_grad(); }
  std::vector<double>& grad(int id) { return values_[static_cast<std::size_t>(id)].grad(); }

  bool recording() const { return record_; }
  std::size_t value_count() const { return values_.size(); }
  std::size_t node_count() const { return nodes_.size(); }
  std::size_t last_backward_visits() const { return last_visits_; }
  std::uint64_t id() const { return id_; }

 private:
  struct Node {
    std::vector<int> inputs;
    int output;
    BackwardFn backward;
  };

  Var push(Tensor value, bool requires_grad);
  bool any_requires_grad(const std::vector<Var>& inputs) const;

  std::deque<Tensor> values_;
  std::vector<Node> nodes_;
  bool record_;
  std::uint64_t id_;
  std::size_t last_visits_ = 0;
};

}  // namespace motarfuse
