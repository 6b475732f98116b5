#include "implantheat/common.hpp"

#include <array>
#include <memory>
#include <mutex>

#include "implantheat/quadrature.hpp"

namespace implantheat {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::input:
      return "input";
    case ErrorKind::geometry:
      return "geometry";
    case ErrorKind::numerical:
      return "numerical";
    case ErrorKind::solver:
      return "solver";
    case ErrorKind::io:
      return "io";
    case ErrorKind::config:
      return "config";
  }
  return "unknown";
}

namespace {

GaussRule make_rule(int n) {
  GaussRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  // Newton iteration on P_n starting from the Chebyshev-like guess.
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(kPi * (i + 0.75) / (n + 0.5));
    double dp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p0 = 1.0;
      double p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1.0);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    const double w = 2.0 / ((1.0 - x * x) * dp * dp);
    // map [-1,1] -> [0,1]
    rule.nodes[i] = 0.5 * (1.0 - x);
    rule.nodes[n - 1 - i] = 0.5 * (1.0 + x);
    rule.weights[i] = 0.5 * w;
    rule.weights[n - 1 - i] = 0.5 * w;
  }
  return rule;
}

}  // namespace

const GaussRule& gauss_legendre(int order) {
  constexpr int kMax = 64;
  if (order < 1 || order > kMax) {
    throw Error(ErrorKind::input, "Gauss-Legendre order out of range: " + std::to_string(order));
  }
  static std::array<std::unique_ptr<GaussRule>, kMax + 1> cache;
  static std::once_flag flags[kMax + 1];
  std::call_once(flags[order], [order] { cache[order] = std::make_unique<GaussRule>(make_rule(order)); });
  return *cache[order];
}

}  // namespace implantheat
