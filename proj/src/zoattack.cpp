#include "rpg/zoattack.hpp"

#include <cmath>
#include <numeric>
#include <ostream>

#include "rpg/errors.hpp"

namespace rpg {

std::vector<Tensor> sample_unit_directions(const Dims& dims, std::size_t q, std::mt19937_64& rng, const Tensor* mask) {
  if (dims_product(dims) == 0) throw ShapeError("direction dimension must be at least 1");
  if (mask && mask->dims() != dims) throw ShapeError("direction mask dims mismatch");
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<Tensor> out;
  out.reserve(q);
  while (out.size() < q) {
    Tensor u(dims);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = (mask && (*mask)[i] == 0.0) ? 0.0 : nd(rng);
    const double n = l2_norm(u);
    if (n == 0.0) continue;  // all-zero draw (or empty mask support): redraw
    for (auto& v : u.values()) v /= n;
    out.push_back(std::move(u));
  }
  return out;
}

Tensor zo_gradient(const LossFn& loss, const Tensor& x, const ZOConfig& cfg, std::mt19937_64& rng, const Tensor* mask) {
  if (cfg.q == 0) throw ConfigError("zeroth-order estimator needs q >= 1");
  if (!(cfg.mu > 0.0)) throw ConfigError("smoothing mu must be positive");
  if (cfg.b < 0.0) throw ConfigError("scaling b must be positive");
  const double b = cfg.b > 0.0 ? cfg.b : static_cast<double>(x.size());
  const auto dirs = sample_unit_directions(x.dims(), cfg.q, rng, mask);
  const double base = loss(x);
  Tensor g(x.dims());
  Tensor probe(x.dims());
  for (const auto& u : dirs) {
    for (std::size_t i = 0; i < x.size(); ++i) probe[i] = x[i] + cfg.mu * u[i];
    axpy(loss(probe) - base, u, g);
  }
  const double scale = b / (static_cast<double>(cfg.q) * cfg.mu);
  for (auto& v : g.values()) v *= scale;
  return g;
}

std::string_view to_string(QueryPurpose purpose) {
  switch (purpose) {
    case QueryPurpose::baseline: return "baseline";
    case QueryPurpose::direction: return "direction";
    case QueryPurpose::eval: return "eval";
  }
  return "unknown";
}

AttackTrace::AttackTrace(std::ostream& os) : os_(os) {
  os_ << "query_index,account,epoch,batch,purpose,loss\n";
  os_.precision(17);
}

void AttackTrace::record(int account, std::size_t epoch, std::size_t batch, QueryPurpose purpose,
                         std::optional<double> loss) {
  os_ << index_++ << ',' << account << ',' << epoch << ',' << batch << ',' << to_string(purpose) << ',';
  if (loss)
    os_ << *loss;
  else
    os_ << "blocked";
  os_ << '\n';
}

Tensor zo_estimate_gradient(ScoreOracle& oracle, int account, const Tensor& x_target, const AdversarialProgram& prog,
                            const LabelMapping& mapping, std::size_t y, const ZOConfig& cfg, std::mt19937_64& rng,
                            const FocalLossSpec& focal) {
  const Tensor x = prog.apply(x_target);
  return zo_gradient(
      [&](const Tensor& in) { return sample_loss(oracle.predict_scores(account, in), mapping, y, focal); }, x, cfg,
      rng, cfg.mask_directions ? &prog.mask() : nullptr);
}

namespace {

// Direction draws use their own stream so that initialization and shuffling follow
// the same schedule as the white-box attack with the same seed.
constexpr std::uint64_t kDirectionStream = 0x5a17c0ffee123457ULL;

class Attacker {
 public:
  Attacker(ScoreOracle& oracle, const LabelMapping& mapping, const BlackboxConfig& cfg, AttackTrace* trace)
      : oracle_(oracle), mapping_(mapping), cfg_(cfg), trace_(trace) {}

  AttackBudget budget;
  std::size_t epoch = 0;
  std::size_t batch = 0;

  double query_loss(const Tensor& x, std::size_t y, QueryPurpose purpose) {
    if (budget.accounts_used == 0) budget.accounts_used = 1;
    ++budget.queries;
    try {
      const double l = sample_loss(oracle_.predict_scores(account_, x), mapping_, y, cfg_.base.focal);
      if (trace_) trace_->record(account_, epoch, batch, purpose, l);
      return l;
    } catch (const BlockedAccountError&) {
      if (trace_) trace_->record(account_, epoch, batch, purpose, std::nullopt);
      ++budget.detections;
      if (account_ + 1 >= static_cast<int>(cfg_.max_accounts))
        throw AccountsExhaustedError("all " + std::to_string(cfg_.max_accounts) + " accounts are blocked");
      ++account_;
      ++budget.accounts_used;
      throw;
    }
  }

  /// Repeats `op` on fresh accounts until it completes without a ban.
  template <class Op>
  auto retrying(Op&& op) {
    for (;;) {
      try {
        return op();
      } catch (const BlockedAccountError&) {
      }
    }
  }

 private:
  ScoreOracle& oracle_;
  const LabelMapping& mapping_;
  const BlackboxConfig& cfg_;
  AttackTrace* trace_;
  int account_ = 0;
};

}  // namespace

BlackboxResult blackbox_reprogram(ScoreOracle& oracle, const LabeledDataset& train, const LabelMapping& mapping,
                                  const PaddingSpec& padding, const BlackboxConfig& cfg,
                                  const AdversarialProgram* init, AttackTrace* trace) {
  const ReprogramConfig& base = cfg.base;
  if (base.batch == 0) throw ConfigError("batch size must be positive");
  if (cfg.max_accounts == 0) throw ConfigError("at least one attacker account is required");
  if (train.empty()) throw ConfigError("empty training set");
  if (cfg.zo.q == 0) throw ConfigError("black-box attack needs q >= 1");
  mapping.validate(oracle.num_classes());

  std::mt19937_64 rng(base.seed);
  std::mt19937_64 dir_rng(base.seed ^ kDirectionStream);
  AdversarialProgram prog = init ? *init : AdversarialProgram::random(padding, rng());

  BlackboxResult result;
  result.program = prog;
  if (base.epochs == 0) return result;

  const std::size_t n = train.size();
  const std::size_t batches = n / base.batch;
  if (batches == 0) throw ConfigError("batch size " + std::to_string(base.batch) + " exceeds training set");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  Attacker attacker(oracle, mapping, cfg, trace);
  const Tensor* dir_mask = cfg.zo.mask_directions ? &prog.mask() : nullptr;
  try {
    for (std::size_t epoch = 0; epoch < base.epochs; ++epoch) {
      attacker.epoch = epoch;
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t b = 0; b < batches; ++b) {
        attacker.batch = b;
        const Tensor delta = prog.delta();
        Tensor g(prog.weights().dims());
        for (std::size_t i = b * base.batch; i < (b + 1) * base.batch; ++i) {
          const std::size_t idx = order[i];
          const std::size_t y = train.labels[idx];
          const Tensor x = prog.apply(train.samples[idx], delta);
          const Tensor gi = attacker.retrying([&] {
            bool first = true;
            return zo_gradient(
                [&](const Tensor& in) {
                  const auto purpose = first ? QueryPurpose::baseline : QueryPurpose::direction;
                  first = false;
                  return attacker.query_loss(in, y, purpose);
                },
                x, cfg.zo, dir_rng, dir_mask);
          });
          axpy(1.0, gi, g);
        }
        apply_update(prog, (1.0 / static_cast<double>(base.batch)) * g, base.eta, base.rule);
      }
      const Tensor delta = prog.delta();
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const Tensor x = prog.apply(train.samples[i], delta);
        total += attacker.retrying([&] { return attacker.query_loss(x, train.labels[i], QueryPurpose::eval); });
      }
      const double loss = total / static_cast<double>(n);
      if (!std::isfinite(loss)) throw NumericError("black-box loss is not finite at epoch " + std::to_string(epoch));
      result.epoch_losses.push_back(loss);
      if (loss < result.best_loss) {
        result.best_loss = loss;
        result.program = prog;
      }
    }
  } catch (const AccountsExhaustedError&) {
    result.aborted = true;
  }
  result.budget = attacker.budget;
  return result;
}

BlackboxResult finetune_from_surrogate(const AdversarialProgram& surrogate_program, ScoreOracle& oracle,
                                       const LabeledDataset& train, const LabelMapping& mapping,
                                       const BlackboxConfig& cfg, AttackTrace* trace) {
  return blackbox_reprogram(oracle, train, mapping, surrogate_program.padding(), cfg, &surrogate_program, trace);
}

}  // namespace rpg
