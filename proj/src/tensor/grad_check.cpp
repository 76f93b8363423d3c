#include "itst/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "itst/errors.hpp"

namespace itst {

double evaluate(const ScalarObjective& f) {
  Graph g(GradMode::kInference);
  const double v = g.value(f(g))[0];
  if (!std::isfinite(v)) throw NonFiniteError("objective is not finite");
  return v;
}

GradCheckReport grad_check(const ScalarObjective& f, std::span<Parameter* const> params,
                           double h, double tol) {
  for (Parameter* p : params) p->zero_grad();
  {
    Graph g;
    Var loss = f(g);
    if (!std::isfinite(g.value(loss)[0])) throw NonFiniteError("objective is not finite");
    g.backward(loss);
  }

  GradCheckReport report;
  for (Parameter* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double up = evaluate(f);
      p->value[i] = saved - h;
      const double down = evaluate(f);
      p->value[i] = saved;

      const double numeric = (up - down) / (2.0 * h);
      const double analytic = p->grad[i];
      const double abs_err = std::fabs(analytic - numeric);
      const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-3});
      const double rel = abs_err / denom;
      ++report.checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_parameter = p->name;
        report.worst_index = i;
      }
    }
  }
  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace itst
