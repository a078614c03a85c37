#pragma once

#include <functional>
#include <string>
#include <vector>

#include "motarfuse/params.hpp"

namespace motarfuse {

// Relative error per element is |analytic - numeric| / max(|analytic|, |numeric|, floor).
struct GradCheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  double floor = 1e-4;
  std::size_t trials = 3;
  std::uint64_t seed = 2024;
};

// Builds a scalar loss from the bound parameters and the input leaves.
using GradLossFn = std::function<Var(Binder& b, const std::vector<Var>& inputs)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;  // number of scalar entries compared
  std::string worst;        // location of the largest error
};

// Compares tape gradients of `loss` against central differences over every
// entry of every parameter in `params` and every tensor in `inputs`.
GradCheckReport check_gradients(ParameterSet& params, std::vector<Tensor> inputs, const GradLossFn& loss,
                                const GradCheckOptions& opt);

struct GradCheckResult {
  std::string name;
  std::size_t trials = 0;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;
  bool passed = false;
};

// Every differentiable op and composite block, each on opt.trials seeded
// random instances.
std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opt = {});

}  // namespace motarfuse
