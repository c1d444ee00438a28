#pragma once

#include <span>
#include <vector>

#include "rpg/tensor.hpp"

namespace rpg {

/// params -= eta * grads
void sgd_step(std::span<double> params, std::span<const double> grads, double eta);

struct RmsPropConfig {
  double learning_rate = 1e-4;
  double decay = 0.9;
  double epsilon = 1e-8;
};

/// Per-parameter squared-gradient accumulator:
///   v' = decay * v + (1 - decay) * g^2
///   p' = p - lr * g / sqrt(v' + eps)
class RmsProp {
 public:
  explicit RmsProp(RmsPropConfig cfg = {}) : cfg_(cfg) {}

  const RmsPropConfig& config() const noexcept { return cfg_; }
  const std::vector<Tensor>& accumulators() const noexcept { return acc_; }

  /// Accumulators are created lazily with the parameter shapes on the first call.
  void step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads);

 private:
  RmsPropConfig cfg_;
  std::vector<Tensor> acc_;
};

/// Single-tensor RMSprop update; acc has the shape of params.
void rmsprop_step(const RmsPropConfig& cfg, std::span<double> acc, std::span<double> params,
                  std::span<const double> grads);

}  // namespace rpg
