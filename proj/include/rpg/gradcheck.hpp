#pragma once

#include <cstdint>
#include <functional>

#include "rpg/nn.hpp"

namespace rpg {

struct GradCheckResult {
  double max_relative_error = 0.0;
  bool passed = true;
};

using ScalarFn = std::function<double(const Tensor&)>;
using GradientFn = std::function<Tensor(const Tensor&)>;

/// Compares an analytic gradient against central differences at x.
/// Error per coordinate is |analytic - numeric| / max(1, |numeric|).
GradCheckResult check_gradient(const ScalarFn& f, const GradientFn& grad, const Tensor& x, double step,
                               double tolerance);

/// Checks input and parameter gradients of net at x for the scalar loss r . net(x),
/// with r a fixed seeded random projection. Inputs of exactly zero at a ReLU are nudged by 1e-7.
GradCheckResult finite_diff_check(const FeedforwardNet& net, const Tensor& x, double tolerance,
                                  double step = 1e-4, std::uint64_t seed = 17);

}  // namespace rpg
