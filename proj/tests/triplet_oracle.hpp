#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "motarfuse/tensor.hpp"

namespace motarfuse::testing {

// Every (anchor, positive, negative) triple enumerated, hardest kept per anchor.
inline double triplet_oracle(const Tensor& f, const std::vector<int>& labels, double margin) {
  const std::size_t n = f.rows(), d = f.cols();
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t c = 0; c < d; ++c) s += (f.at(i, c) - f.at(j, c)) * (f.at(i, c) - f.at(j, c));
    return std::sqrt(s);
  };
  double total = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    double worst = -std::numeric_limits<double>::infinity();
    for (std::size_t p = 0; p < n; ++p) {
      if (p == a || labels[p] != labels[a]) continue;
      for (std::size_t q = 0; q < n; ++q) {
        if (labels[q] == labels[a]) continue;
        worst = std::max(worst, dist(a, p) - dist(a, q) + margin);
      }
    }
    total += std::max(0.0, worst);
  }
  return total / static_cast<double>(n);
}

}  // namespace motarfuse::testing
