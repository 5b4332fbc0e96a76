#pragma once

#include <functional>
#include <limits>

#include "srscn/tape.hpp"

namespace srscn::diff {

struct GradCheckResult {
  bool margin_ok = false;  // base point far enough from kinks and clamp bounds
  double kink_margin = 0.0;
  double max_rel_err = std::numeric_limits<double>::infinity();
};

/// Central finite-difference check of reverse-mode gradients. `build` maps a
/// tape and the bound probe leaf to a scalar output. If the base forward
/// passes within 10*h of a relu kink, clamp bound, pow(<1) base of zero, or
/// a maxpool tie, no differences are taken and margin_ok is false; the
/// caller resamples x. Otherwise max_rel_err is
///   max_i |analytic_i - central_i| / max(1e-8, |analytic_i| + |central_i|).
GradCheckResult grad_check(const std::function<Var(Tape&, Var)>& build, const Tensor& x, double h);

}  // namespace srscn::diff
