#include "rpg/optim.hpp"

#include <cmath>

#include "rpg/errors.hpp"

namespace rpg {

void sgd_step(std::span<double> params, std::span<const double> grads, double eta) {
  if (params.size() != grads.size()) throw ShapeError("sgd_step: params/grads length mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) params[i] -= eta * grads[i];
}

void rmsprop_step(const RmsPropConfig& cfg, std::span<double> acc, std::span<double> params,
                  std::span<const double> grads) {
  if (params.size() != grads.size() || acc.size() != params.size())
    throw ShapeError("rmsprop_step: accumulator/params/grads length mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    acc[i] = cfg.decay * acc[i] + (1.0 - cfg.decay) * g * g;
    params[i] -= cfg.learning_rate * g / std::sqrt(acc[i] + cfg.epsilon);
  }
}

void RmsProp::step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size()) throw ShapeError("RmsProp::step: parameter count mismatch");
  if (acc_.empty())
    for (const auto* p : params) acc_.emplace_back(p->dims());
  if (acc_.size() != params.size()) throw ShapeError("RmsProp::step: optimizer bound to a different net");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require_same_dims(*params[i], acc_[i], "rmsprop accumulator");
    rmsprop_step(cfg_, acc_[i].values(), params[i]->values(), grads[i].values());
  }
}

}  // namespace rpg
