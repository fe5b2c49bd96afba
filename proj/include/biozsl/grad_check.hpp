#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "biozsl/graph.hpp"
#include "biozsl/params.hpp"

namespace biozsl {

// Compares analytic gradients against central finite differences.
//
// `build` constructs the scalar loss on a fresh Graph from the current
// parameter values; it is invoked repeatedly with perturbed parameters.
// Returns max over parameter entries of
//   |analytic - numeric| / max(1e-12, |analytic| + |numeric|).
inline double grad_check(const std::function<Graph::NodeId(Graph&)>& build, std::span<Parameter* const> params,
                         double eps) {
  if (eps <= 0.0) throw DomainError("grad_check: eps must be positive");

  for (Parameter* p : params) p->grad.values.assign(p->grad.values.size(), 0.0);

  std::vector<std::vector<double>> analytic;
  {
    Graph g;
    const Graph::NodeId root = build(g);
    g.backward(root);
    for (Parameter* p : params) analytic.push_back(p->grad.values);
    for (Parameter* p : params) p->grad.values.assign(p->grad.values.size(), 0.0);
  }

  const auto eval = [&build]() {
    Graph g;
    return g.value(build(g)).item();
  };

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    for (std::size_t i = 0; i < p->value.values.size(); ++i) {
      const double orig = p->value.values[i];
      p->value.values[i] = orig + eps;
      const double f_plus = eval();
      p->value.values[i] = orig - eps;
      const double f_minus = eval();
      p->value.values[i] = orig;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double rel = std::abs(a - numeric) / std::max(1e-12, std::abs(a) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace biozsl
