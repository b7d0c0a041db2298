#pragma once

#include "oodlab/diffcore.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace oodlab {

/// Raised when a perturbed evaluation of the loss is not finite.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::size_t param, Eigen::Index row, Eigen::Index col, double value)
      : std::runtime_error("non-finite loss " + std::to_string(value) + " at param " +
                           std::to_string(param) + " coordinate (" + std::to_string(row) +
                           ", " + std::to_string(col) + ")"),
        param_index(param), row(row), col(col) {}

  std::size_t param_index;
  Eigen::Index row;
  Eigen::Index col;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  /// Smallest |pre-activation| of any relu at the unperturbed point.
  double kink_distance = std::numeric_limits<double>::infinity();
};

/// Builds the loss on a fresh graph from parameter leaves.
using LossBuilder = std::function<Var(Graph&, std::span<const Var>)>;

/// Compares reverse-mode gradients with central differences:
/// max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
inline GradCheckResult finite_difference_check(const LossBuilder& loss_fn,
                                               std::vector<Matrix> params,
                                               double step = 1e-5) {
  if (!(step > 0)) throw std::invalid_argument("finite_difference_check: step must be > 0");

  std::vector<Matrix> analytic;
  GradCheckResult result;
  {
    Graph g;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(g.parameter(p));
    Var loss = loss_fn(g, vars);
    g.backward(loss);
    for (const auto& v : vars) analytic.push_back(v.grad());
    result.kink_distance = g.min_kink_distance();
  }

  auto evaluate = [&](std::size_t pi, Eigen::Index r, Eigen::Index c) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(g.constant(p));
    const double v = loss_fn(g, vars).scalar();
    if (!std::isfinite(v)) throw NonFiniteLoss(pi, r, c, v);
    return v;
  };

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matrix& p = params[pi];
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      for (Eigen::Index r = 0; r < p.rows(); ++r) {
        const double orig = p(r, c);
        p(r, c) = orig + step;
        const double up = evaluate(pi, r, c);
        p(r, c) = orig - step;
        const double down = evaluate(pi, r, c);
        p(r, c) = orig;

        const double numeric = (up - down) / (2 * step);
        const double a = analytic[pi](r, c);
        const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
        const double err = std::abs(a - numeric) / denom;
        if (err > result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_param = pi;
          result.worst_row = r;
          result.worst_col = c;
        }
      }
    }
  }
  return result;
}

}  // namespace oodlab
