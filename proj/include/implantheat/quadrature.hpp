#pragma once

#include <span>
#include <vector>

namespace implantheat {

/// Gauss-Legendre rule mapped to the unit interval [0, 1]; weights sum to 1.
struct GaussRule {
  std::vector<double> nodes;
  std::vector<double> weights;
  int order() const { return static_cast<int>(nodes.size()); }
};

/// Cached rule of the requested order (1..64).
const GaussRule& gauss_legendre(int order);

}  // namespace implantheat
