#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string_view>
#include <vector>

#include "rpg/models.hpp"
#include "rpg/reprogram.hpp"

namespace rpg {

/// One-sided averaged random-direction gradient estimator settings.
struct ZOConfig {
  std::size_t q = 5;     // directions per estimate
  double mu = 0.1;       // smoothing
  double b = 0.0;        // scaling; 0 selects the input dimension
  bool mask_directions = false;  // restrict directions to the program frame
};

struct AttackBudget {
  std::size_t accounts_used = 0;
  std::uint64_t queries = 0;       // Q: every query the attacker issued
  std::uint64_t detections = 0;    // bans suffered
};

/// q directions drawn uniformly from the unit sphere (normalized Gaussians).
/// With a mask, coordinates where mask == 0 are zeroed before normalization.
std::vector<Tensor> sample_unit_directions(const Dims& dims, std::size_t q, std::mt19937_64& rng,
                                           const Tensor* mask = nullptr);

using LossFn = std::function<double(const Tensor&)>;

/// (b / (q mu)) * sum_j [loss(x + mu u_j) - loss(x)] u_j. Evaluates loss(x) once, then the q
/// perturbed points in order.
Tensor zo_gradient(const LossFn& loss, const Tensor& x, const ZOConfig& cfg, std::mt19937_64& rng,
                   const Tensor* mask = nullptr);

enum class QueryPurpose { baseline, direction, eval };
std::string_view to_string(QueryPurpose purpose);

/// Rows: query_index,account,epoch,batch,purpose,loss.
class AttackTrace {
 public:
  explicit AttackTrace(std::ostream& os);
  void record(int account, std::size_t epoch, std::size_t batch, QueryPurpose purpose, std::optional<double> loss);

 private:
  std::ostream& os_;
  std::uint64_t index_ = 0;
};

/// Estimates the gradient of the per-sample loss at the programmed input prog.apply(x_target).
/// Issues exactly q + 1 queries (baseline first) on `account`.
Tensor zo_estimate_gradient(ScoreOracle& oracle, int account, const Tensor& x_target, const AdversarialProgram& prog,
                            const LabelMapping& mapping, std::size_t y, const ZOConfig& cfg, std::mt19937_64& rng,
                            const FocalLossSpec& focal = {});

struct BlackboxConfig {
  ReprogramConfig base;          // eta, epochs, batch, seed, focal, update rule
  ZOConfig zo;
  std::size_t max_accounts = 1;  // accounts available for rotation on ban
};

struct BlackboxResult {
  AdversarialProgram program;
  AttackBudget budget;
  std::vector<double> epoch_losses;
  double best_loss = std::numeric_limits<double>::infinity();
  bool aborted = false;  // accounts exhausted; program is the best found so far
};

/// The white-box training loop with estimated gradients through the oracle. The epoch-end loss is
/// measured through the oracle too (purpose "eval"). On a ban the attacker switches to the
/// next account and repeats the interrupted estimate; when none remain the run aborts with
/// the best program so far.
BlackboxResult blackbox_reprogram(ScoreOracle& oracle, const LabeledDataset& train, const LabelMapping& mapping,
                                  const PaddingSpec& padding, const BlackboxConfig& cfg,
                                  const AdversarialProgram* init = nullptr, AttackTrace* trace = nullptr);

/// blackbox_reprogram starting from a program computed on a surrogate model.
BlackboxResult finetune_from_surrogate(const AdversarialProgram& surrogate_program, ScoreOracle& oracle,
                                       const LabeledDataset& train, const LabelMapping& mapping,
                                       const BlackboxConfig& cfg, AttackTrace* trace = nullptr);

}  // namespace rpg
