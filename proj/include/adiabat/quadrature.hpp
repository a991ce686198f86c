// Quadrature grids on [0, T] for the gradient chain-rule integral.
#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace adiabat {

struct QuadratureGrid {
  std::vector<double> nodes;
  std::vector<double> weights;
};

enum class QuadratureRule { gauss_legendre, trapezoid };

struct QuadratureSpec {
  QuadratureRule rule = QuadratureRule::gauss_legendre;
  int nodes = 256;
  /// Nodes per panel for the composite Gauss-Legendre rule.
  int panel_order = 4;
  /// Gauss-Legendre panels are bisected until two halves agree with the
  /// whole to this relative tolerance; 0 keeps the fixed grid.
  double refine_tol = 1e-9;
  int refine_depth = 12;
  bool operator==(const QuadratureSpec&) const = default;
};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
inline QuadratureGrid gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("Gauss-Legendre order must be positive");
  QuadratureGrid g;
  g.nodes.resize(n);
  g.weights.resize(n);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 0;
    for (int iter = 0; iter < 100; ++iter) {
      double p0 = 1, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1);
      const double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-16) break;
    }
    {
      double p0 = 1, p1 = x;
      for (int k = 2; k <= n; ++k) {
        const double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      dp = n * (x * p1 - p0) / (x * x - 1);
    }
    const double w = 2.0 / ((1 - x * x) * dp * dp);
    g.nodes[i] = -x;
    g.nodes[n - 1 - i] = x;
    g.weights[i] = w;
    g.weights[n - 1 - i] = w;
  }
  if (n % 2 == 1) g.nodes[n / 2] = 0.0;
  return g;
}

/// Gauss-Legendre rule mapped to [a, b].
inline QuadratureGrid gauss_legendre(int n, double a, double b) {
  QuadratureGrid g = gauss_legendre(n);
  const double half = (b - a) / 2, mid = (a + b) / 2;
  for (int i = 0; i < n; ++i) {
    g.nodes[i] = mid + half * g.nodes[i];
    g.weights[i] *= half;
  }
  return g;
}

inline QuadratureGrid make_grid(const QuadratureSpec& spec, double duration) {
  if (spec.nodes < 2) throw std::invalid_argument("quadrature needs at least two nodes");
  QuadratureGrid g;
  if (spec.rule == QuadratureRule::trapezoid) {
    const int n = spec.nodes;
    const double h = duration / (n - 1);
    for (int i = 0; i < n; ++i) {
      g.nodes.push_back(i * h);
      g.weights.push_back((i == 0 || i == n - 1) ? h / 2 : h);
    }
    return g;
  }
  if (spec.panel_order < 1 || spec.nodes % spec.panel_order != 0) {
    throw std::invalid_argument("composite Gauss-Legendre node count " + std::to_string(spec.nodes) +
                                " is not a multiple of the panel order");
  }
  const int panels = spec.nodes / spec.panel_order;
  const QuadratureGrid ref = gauss_legendre(spec.panel_order);
  const double h = duration / panels;
  for (int p = 0; p < panels; ++p) {
    for (int i = 0; i < spec.panel_order; ++i) {
      g.nodes.push_back(h * (p + 0.5 * (ref.nodes[i] + 1.0)));
      g.weights.push_back(0.5 * h * ref.weights[i]);
    }
  }
  return g;
}

}  // namespace adiabat
