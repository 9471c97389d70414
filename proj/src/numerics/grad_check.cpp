#include "mscdt/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace mscdt {
namespace {

double evaluate(const ScalarFn& f) {
  const Var<double> out = f();
  if (out.value().size() != 1) {
    throw ShapeError("grad_check: function must return a scalar, got " +
                     shape_string(out.shape()));
  }
  const double v = out.value()[0];
  if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check_entries(const ScalarFn& f,
                                   std::span<const GradEntry> entries,
                                   double h) {
  std::unordered_set<Parameter<double>*> touched;
  for (const auto& e : entries) touched.insert(e.parameter);
  for (auto* p : touched) p->zero_grad();
  {
    const Var<double> out = f();
    backward(out);
  }

  GradCheckReport report;
  for (const auto& e : entries) {
    double& slot = e.parameter->value[e.index];
    const double saved = slot;
    slot = saved + h;
    const double up = evaluate(f);
    slot = saved - h;
    const double down = evaluate(f);
    slot = saved;

    const double central = (up - down) / (2.0 * h);
    const double analytic = e.parameter->grad[e.index];
    const double abs_err = std::abs(analytic - central);
    const double rel_err =
        abs_err / std::max({std::abs(analytic), std::abs(central), 1e-8});
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
    if (rel_err > report.max_rel_error || report.entries_checked == 0) {
      report.max_rel_error = std::max(report.max_rel_error, rel_err);
      report.worst_parameter = e.parameter->name();
      report.worst_index = e.index;
    }
    ++report.entries_checked;
  }
  for (auto* p : touched) p->zero_grad();
  return report;
}

GradCheckReport grad_check(const ScalarFn& f,
                           std::span<Parameter<double>* const> params,
                           double h) {
  std::vector<GradEntry> entries;
  for (auto* p : params) {
    for (std::size_t i = 0; i < p->value.size(); ++i) entries.push_back({p, i});
  }
  return grad_check_entries(f, entries, h);
}

}  // namespace mscdt
