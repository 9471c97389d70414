#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mscdt/numerics/autograd.hpp"

namespace mscdt {

struct GradCheckReport {
  /// max |analytic - central| / max(|analytic|, |central|, 1e-8)
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t entries_checked = 0;
};

/// One scalar slot of a parameter to probe.
struct GradEntry {
  Parameter<double>* parameter;
  std::size_t index;
};

using ScalarFn = std::function<Var<double>()>;

/// Compares reverse-mode gradients of `f` against central differences with
/// step `h` on the listed entries. `f` must rebuild its graph on each call.
GradCheckReport grad_check_entries(const ScalarFn& f,
                                   std::span<const GradEntry> entries,
                                   double h = 1e-5);

/// Every entry of every listed parameter.
GradCheckReport grad_check(const ScalarFn& f,
                           std::span<Parameter<double>* const> params,
                           double h = 1e-5);

}  // namespace mscdt
