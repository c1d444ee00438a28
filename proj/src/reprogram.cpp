#include "rpg/reprogram.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>

#include "rpg/errors.hpp"
#include "rpg/io.hpp"

namespace rpg {

AdversarialProgram::AdversarialProgram(PaddingSpec spec, Tensor weights)
    : spec_(spec), w_(std::move(weights)), m_(reprogramming_mask(spec)) {
  require_same_dims(w_, m_, "program weights vs mask");
}

AdversarialProgram AdversarialProgram::random(const PaddingSpec& spec, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  Tensor w = Tensor::image(spec.outer, spec.channels);
  for (auto& v : w.values()) v = u(rng);
  return AdversarialProgram(spec, std::move(w));
}

Tensor AdversarialProgram::delta() const {
  require_same_dims(w_, m_, "program weights vs mask");
  Tensor d(w_.dims());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (m_[i] != 0.0 && m_[i] != 1.0) throw InvariantError("reprogramming mask is not binary");
    d[i] = std::tanh(w_[i]) * m_[i];
  }
  return d;
}

Tensor AdversarialProgram::apply(const Tensor& x_target) const { return apply(x_target, delta()); }

Tensor AdversarialProgram::apply(const Tensor& x_target, const Tensor& delta) const {
  Tensor out = pad_and_mask(x_target, spec_).padded;
  require_same_dims(out, delta, "program delta");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
  return out;
}

Tensor AdversarialProgram::chain_to_weights(const Tensor& input_grad) const {
  require_same_dims(input_grad, w_, "input gradient vs program");
  Tensor g(w_.dims());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double t = std::tanh(w_[i]);
    g[i] = input_grad[i] * m_[i] * (1.0 - t * t);
  }
  return g;
}

LabelMapping LabelMapping::consecutive(std::size_t source_classes, std::size_t target_classes,
                                       std::size_t group_size) {
  if (target_classes == 0 || group_size == 0) throw ConfigError("label mapping needs t >= 1 and |K| >= 1");
  if (target_classes * group_size > source_classes)
    throw ConfigError("label mapping: t * |K| = " + std::to_string(target_classes * group_size) +
                      " exceeds source classes " + std::to_string(source_classes));
  LabelMapping m;
  for (std::size_t y = 0; y < target_classes; ++y) {
    auto& g = m.groups.emplace_back();
    for (std::size_t j = 0; j < group_size; ++j) g.push_back(static_cast<std::uint32_t>(y * group_size + j));
  }
  return m;
}

void LabelMapping::validate(std::size_t source_classes) const {
  if (groups.empty()) throw ConfigError("label mapping has no target labels");
  const std::size_t size = groups.front().size();
  std::vector<bool> seen(source_classes, false);
  for (const auto& g : groups) {
    if (g.size() != size || size == 0) throw ConfigError("label mapping groups must share a non-zero size");
    for (auto k : g) {
      if (k >= source_classes) throw ConfigError("label mapping references source label " + std::to_string(k));
      if (seen[k]) throw ConfigError("label mapping groups overlap at source label " + std::to_string(k));
      seen[k] = true;
    }
  }
}

void write_mapping_csv(std::ostream& os, const LabelMapping& mapping) {
  os << "target_label,source_label\n";
  for (std::size_t y = 0; y < mapping.groups.size(); ++y)
    for (auto k : mapping.groups[y]) os << y << ',' << k << '\n';
}

LabelMapping read_mapping_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "target_label,source_label") throw FormatError("mapping CSV header missing");
  LabelMapping m;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::size_t y = 0, k = 0;
    char comma = 0;
    if (!(row >> y >> comma >> k) || comma != ',') throw FormatError("bad mapping row '" + line + "'");
    if (y >= m.groups.size()) m.groups.resize(y + 1);
    m.groups[y].push_back(static_cast<std::uint32_t>(k));
  }
  return m;
}

double mlm_score(const Tensor& scores, const LabelMapping& mapping, std::size_t target_label) {
  if (target_label >= mapping.groups.size())
    throw ConfigError("target label " + std::to_string(target_label) + " out of range");
  const auto& g = mapping.groups[target_label];
  double s = 0.0;
  for (auto k : g) {
    if (k >= scores.size()) throw ShapeError("mapping references a score index beyond the model output");
    s += scores[k];
  }
  return s / static_cast<double>(g.size());
}

namespace {

constexpr double kMinP = 1e-12;
constexpr double kOneSlack = 1e-12;

double checked_p(double p) {
  if (!(p <= 1.0 + kOneSlack)) throw ConfigError("focal loss probability " + std::to_string(p) + " exceeds 1");
  return std::clamp(p, kMinP, 1.0);
}

}  // namespace

double focal_loss(double p_in, const FocalLossSpec& spec) {
  const double p = checked_p(p_in);
  return -std::pow(1.0 - p, spec.gamma) * std::log(p);
}

double focal_loss_derivative(double p_in, const FocalLossSpec& spec) {
  const double p = checked_p(p_in);
  if (p_in < kMinP) return 0.0;  // clamped region is flat
  const double q = 1.0 - p;
  const double modulating = q == 0.0 ? (spec.gamma == 1.0 ? 1.0 : 0.0) : spec.gamma * std::pow(q, spec.gamma - 1.0);
  return modulating * std::log(p) - std::pow(q, spec.gamma) / p;
}

double sample_loss(const Tensor& scores, const LabelMapping& mapping, std::size_t y, const FocalLossSpec& focal) {
  return focal_loss(mlm_score(scores, mapping, y), focal);
}

double reprogram_loss(const AdversarialProgram& prog, const LabeledDataset& ds, const LabelMapping& mapping,
                      const ScoreFn& scores, const FocalLossSpec& focal) {
  if (ds.empty()) throw ConfigError("reprogram_loss of an empty batch");
  const Tensor delta = prog.delta();
  double total = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    total += sample_loss(scores(prog.apply(ds.samples[i], delta)), mapping, ds.labels[i], focal);
  const double mean = total / static_cast<double>(ds.size());
  if (!std::isfinite(mean)) throw NumericError("reprogramming loss is not finite");
  return mean;
}

double reprogram_loss(const AdversarialProgram& prog, const LabeledDataset& ds, const LabelMapping& mapping,
                      const Classifier& clf, const FocalLossSpec& focal) {
  return reprogram_loss(prog, ds, mapping, [&](const Tensor& x) { return clf.scores(x); }, focal);
}

Tensor input_gradient(const Classifier& clf, const Tensor& programmed_input, const LabelMapping& mapping,
                      std::size_t y, const FocalLossSpec& focal) {
  const ForwardTrace trace = clf.net.forward_trace(programmed_input);
  const double p = mlm_score(trace.output(), mapping, y);
  const double dl_dp = focal_loss_derivative(p, focal);
  const auto& g = mapping.groups[y];
  Tensor dl_dscores(trace.output().dims());
  for (auto k : g) dl_dscores[k] = dl_dp / static_cast<double>(g.size());
  return clf.net.gradients(trace, dl_dscores).input;
}

double reprogram_accuracy(const AdversarialProgram& prog, const LabeledDataset& ds, const LabelMapping& mapping,
                          const ScoreFn& scores) {
  if (ds.empty()) throw ConfigError("reprogram_accuracy of an empty dataset");
  const Tensor delta = prog.delta();
  std::size_t correct = 0;
  std::vector<double> mlm(mapping.target_classes());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor s = scores(prog.apply(ds.samples[i], delta));
    for (std::size_t y = 0; y < mlm.size(); ++y) mlm[y] = mlm_score(s, mapping, y);
    if (argmax(mlm) == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double reprogram_accuracy(const AdversarialProgram& prog, const LabeledDataset& ds, const LabelMapping& mapping,
                          const Classifier& clf) {
  return reprogram_accuracy(prog, ds, mapping, [&](const Tensor& x) { return clf.scores(x); });
}

void apply_update(AdversarialProgram& prog, const Tensor& input_grad, double eta, UpdateRule rule) {
  const Tensor step = rule == UpdateRule::chain_rule ? prog.chain_to_weights(input_grad) : input_grad;
  require_same_dims(step, prog.weights(), "program update");
  axpy(-eta, step, prog.weights());
  if (!prog.weights().all_finite()) throw NumericError("program weights became non-finite");
}

ReprogramResult whitebox_reprogram(const Classifier& clf, const LabeledDataset& train, const LabelMapping& mapping,
                                   const PaddingSpec& padding, const ReprogramConfig& cfg,
                                   const AdversarialProgram* init) {
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  if (train.empty()) throw ConfigError("empty training set");
  mapping.validate(clf.num_classes);
  std::mt19937_64 rng(cfg.seed);
  AdversarialProgram prog = init ? *init : AdversarialProgram::random(padding, rng());

  ReprogramResult result;
  result.initial_loss = reprogram_loss(prog, train, mapping, clf, cfg.focal);
  result.best_loss = result.initial_loss;
  result.program = prog;
  if (cfg.epochs == 0) return result;

  const std::size_t n = train.size();
  const std::size_t batches = n / cfg.batch;
  if (batches == 0) throw ConfigError("batch size " + std::to_string(cfg.batch) + " exceeds training set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t b = 0; b < batches; ++b) {
      const Tensor delta = prog.delta();
      Tensor g(prog.weights().dims());
      for (std::size_t i = b * cfg.batch; i < (b + 1) * cfg.batch; ++i) {
        const std::size_t idx = order[i];
        axpy(1.0, input_gradient(clf, prog.apply(train.samples[idx], delta), mapping, train.labels[idx], cfg.focal), g);
      }
      apply_update(prog, (1.0 / static_cast<double>(cfg.batch)) * g, cfg.eta, cfg.rule);
    }
    const double loss = reprogram_loss(prog, train, mapping, clf, cfg.focal);
    result.epoch_losses.push_back(loss);
    if (loss < result.best_loss) {
      result.best_loss = loss;
      result.program = prog;
    }
  }
  return result;
}

void save_program(const std::filesystem::path& path, const AdversarialProgram& prog) {
  const auto& p = prog.padding();
  save_weights(path, {{"W", prog.weights()},
                      {"M", prog.mask()},
                      {"padding", Tensor(Dims{3}, {static_cast<double>(p.inner), static_cast<double>(p.outer),
                                                   static_cast<double>(p.channels)})}});
}

AdversarialProgram load_program(const std::filesystem::path& path) {
  const auto t = load_weights(path);
  const Tensor& pad = find_tensor(t, "padding");
  if (pad.size() != 3) throw FormatError("program padding tensor malformed");
  const PaddingSpec spec{static_cast<std::size_t>(pad[0]), static_cast<std::size_t>(pad[1]),
                         static_cast<std::size_t>(pad[2])};
  AdversarialProgram prog(spec, find_tensor(t, "W"));
  if (prog.mask() != find_tensor(t, "M")) throw FormatError("stored mask does not match the padding geometry");
  return prog;
}

}  // namespace rpg
