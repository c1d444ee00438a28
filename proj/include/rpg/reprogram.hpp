#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <vector>

#include "rpg/data.hpp"
#include "rpg/models.hpp"

namespace rpg {

/// Frame perturbation delta = tanh(W) o M around a zero-padded target sample.
class AdversarialProgram {
 public:
  AdversarialProgram() = default;
  AdversarialProgram(PaddingSpec spec, Tensor weights);

  /// W ~ U[-scale, scale].
  static AdversarialProgram random(const PaddingSpec& spec, std::uint64_t seed, double scale = 0.01);

  const PaddingSpec& padding() const noexcept { return spec_; }
  const Tensor& weights() const noexcept { return w_; }
  Tensor& weights() noexcept { return w_; }
  const Tensor& mask() const noexcept { return m_; }

  /// tanh(W) o M, recomputed on every call. Throws InvariantError if M is not binary.
  Tensor delta() const;
  /// Zero-pads x_target and adds delta.
  Tensor apply(const Tensor& x_target) const;
  /// apply() against a precomputed delta.
  Tensor apply(const Tensor& x_target, const Tensor& delta) const;

  /// dL/dW = dL/dx o M o (1 - tanh(W)^2).
  Tensor chain_to_weights(const Tensor& input_grad) const;

  friend bool operator==(const AdversarialProgram&, const AdversarialProgram&) = default;

 private:
  PaddingSpec spec_;
  Tensor w_;
  Tensor m_;
};

/// Target label y scores the mean of source scores over groups[y].
struct LabelMapping {
  std::vector<std::vector<std::uint32_t>> groups;

  /// t groups of `group_size` consecutive source labels: {0..g-1}, {g..2g-1}, ...
  static LabelMapping consecutive(std::size_t source_classes, std::size_t target_classes, std::size_t group_size);

  std::size_t target_classes() const noexcept { return groups.size(); }
  void validate(std::size_t source_classes) const;
};

void write_mapping_csv(std::ostream& os, const LabelMapping& mapping);
LabelMapping read_mapping_csv(std::istream& is);

struct FocalLossSpec {
  double gamma = 2.0;
};

double mlm_score(const Tensor& scores, const LabelMapping& mapping, std::size_t target_label);
/// -(1 - p)^gamma * ln p with p clamped to >= 1e-12. ConfigError for p > 1.
double focal_loss(double p, const FocalLossSpec& spec);
double focal_loss_derivative(double p, const FocalLossSpec& spec);

/// Per-sample loss from a source score vector.
double sample_loss(const Tensor& scores, const LabelMapping& mapping, std::size_t y, const FocalLossSpec& focal);

using ScoreFn = std::function<Tensor(const Tensor&)>;

/// Mean focal loss over ds; ConfigError for an empty batch.
double reprogram_loss(const AdversarialProgram& prog, const LabeledDataset& ds, const LabelMapping& mapping,
                      const ScoreFn& scores, const FocalLossSpec& focal = {});
double reprogram_loss(const AdversarialProgram& prog, const LabeledDataset& ds, const LabelMapping& mapping,
                      const Classifier& clf, const FocalLossSpec& focal = {});

/// Gradient of the per-sample loss w.r.t. the programmed input x + delta.
Tensor input_gradient(const Classifier& clf, const Tensor& programmed_input, const LabelMapping& mapping,
                      std::size_t y, const FocalLossSpec& focal);

/// Fraction of samples whose argmax over target labels of mlm_score equals the label.
double reprogram_accuracy(const AdversarialProgram& prog, const LabeledDataset& ds, const LabelMapping& mapping,
                          const ScoreFn& scores);
double reprogram_accuracy(const AdversarialProgram& prog, const LabeledDataset& ds, const LabelMapping& mapping,
                          const Classifier& clf);

enum class UpdateRule {
  chain_rule,  // W -= eta * g o M o (1 - tanh^2 W)
  raw_input,   // W -= eta * g, skipping the chain rule through tanh and the mask
};

struct ReprogramConfig {
  double eta = 0.05;
  std::size_t epochs = 10;
  std::size_t batch = 24;
  std::uint64_t seed = 0;
  FocalLossSpec focal;
  UpdateRule rule = UpdateRule::chain_rule;
};

struct ReprogramResult {
  AdversarialProgram program;  // lowest-loss program seen
  double best_loss = std::numeric_limits<double>::infinity();
  double initial_loss = std::numeric_limits<double>::infinity();
  std::vector<double> epoch_losses;  // full-training-set loss after each epoch
};

/// One gradient-descent update of W from an input-space gradient.
void apply_update(AdversarialProgram& prog, const Tensor& input_grad, double eta, UpdateRule rule);

/// White-box reprogramming: per-epoch shuffle, floor(n/B) averaged-gradient steps on W,
/// full-set loss after each epoch, best-loss program returned. The initial program is
/// the incumbent, so epochs = 0 returns it with its loss.
ReprogramResult whitebox_reprogram(const Classifier& clf, const LabeledDataset& train, const LabelMapping& mapping,
                                   const PaddingSpec& padding, const ReprogramConfig& cfg,
                                   const AdversarialProgram* init = nullptr);

void save_program(const std::filesystem::path& path, const AdversarialProgram& prog);
AdversarialProgram load_program(const std::filesystem::path& path);

}  // namespace rpg
