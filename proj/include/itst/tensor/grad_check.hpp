#pragma once

#include <functional>
#include <span>
#include <string>

#include "itst/tensor/graph.hpp"

namespace itst {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
  bool passed = true;
};

/// Builds a scalar objective on the given graph. Parameters must be bound
/// with Graph::param so that perturbations are observed.
using ScalarObjective = std::function<Var(Graph&)>;

/// Compares reverse-mode gradients against central differences with step h.
/// Relative error per entry is |analytic - numeric| / max(|analytic|, |numeric|, 1e-3).
/// Throws NonFiniteError if the objective is not finite at a perturbed point.
GradCheckReport grad_check(const ScalarObjective& f, std::span<Parameter* const> params,
                           double h = 1e-5, double tol = 1e-4);

/// Evaluates f without recording a tape.
double evaluate(const ScalarObjective& f);

}  // namespace itst
