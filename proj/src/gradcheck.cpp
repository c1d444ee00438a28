#include "rpg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rpg/errors.hpp"

namespace rpg {
namespace {

double coord_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

bool touches_relu_kink(const FeedforwardNet& net, const Tensor& x) {
  const ForwardTrace t = net.forward_trace(x);
  for (std::size_t i = 0; i < net.layers().size(); ++i) {
    if (net.layers()[i].kind() != LayerKind::relu) continue;
    for (double v : t.activations[i].values())
      if (v == 0.0) return true;
  }
  return false;
}

// Parameter coordinates checked per tensor; full check on small tensors.
constexpr std::size_t kMaxParamCoords = 64;

}  // namespace

GradCheckResult check_gradient(const ScalarFn& f, const GradientFn& grad, const Tensor& x, double step,
                               double tolerance) {
  const Tensor analytic = grad(x);
  require_same_dims(analytic, x, "check_gradient");
  GradCheckResult r;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + step;
    const double up = f(probe);
    probe[i] = x[i] - step;
    const double down = f(probe);
    probe[i] = x[i];
    r.max_relative_error = std::max(r.max_relative_error, coord_error(analytic[i], (up - down) / (2.0 * step)));
  }
  r.passed = r.max_relative_error < tolerance;
  return r;
}

GradCheckResult finite_diff_check(const FeedforwardNet& net, const Tensor& x_in, double tolerance, double step,
                                  std::uint64_t seed) {
  Tensor x = x_in;
  for (int tries = 0; tries < 8 && touches_relu_kink(net, x); ++tries)
    for (auto& v : x.values()) v += 1e-7;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  Tensor proj(net.output_dims());
  for (auto& v : proj.values()) v = nd(rng);

  auto loss_at = [&](const FeedforwardNet& n, const Tensor& in) { return dot(n.forward(in).reshaped(proj.dims()), proj); };

  GradCheckResult r = check_gradient(
      [&](const Tensor& in) { return loss_at(net, in); },
      [&](const Tensor& in) { return net.gradients(in, proj).input; }, x, step, tolerance);

  const NetGradients g = net.gradients(x, proj);
  FeedforwardNet probe = net;
  auto params = probe.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = *params[p];
    std::vector<std::size_t> coords(t.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (coords.size() > kMaxParamCoords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(kMaxParamCoords);
    }
    for (std::size_t i : coords) {
      const double orig = t[i];
      t[i] = orig + step;
      const double up = loss_at(probe, x);
      t[i] = orig - step;
      const double down = loss_at(probe, x);
      t[i] = orig;
      r.max_relative_error = std::max(r.max_relative_error, coord_error(g.params[p][i], (up - down) / (2.0 * step)));
    }
  }
  r.passed = r.max_relative_error < tolerance;
  return r;
}

}  // namespace rpg
