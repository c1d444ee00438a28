#include "rpg/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "rpg/errors.hpp"
#include "rpg/io.hpp"
#include "rpg/optim.hpp"

namespace rpg {

namespace {

constexpr double kMinProb = 1e-300;

void accumulate(std::vector<Tensor>& into, const std::vector<Tensor>& g) {
  for (std::size_t i = 0; i < into.size(); ++i) axpy(1.0, g[i], into[i]);
}

}  // namespace

Classifier train_source_classifier(const LabeledDataset& ds, const ArchConfig& arch,
                                   const ClassifierTrainConfig& cfg, std::uint64_t seed) {
  if (ds.empty()) throw ConfigError("cannot train a classifier on an empty dataset");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  ds.validate();

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * static_cast<double>(ds.size())));
  if (n_hold >= ds.size()) n_hold = 0;
  const std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());
  const LabeledDataset held_out = ds.select(hold);

  Classifier clf;
  clf.num_classes = ds.num_classes;
  clf.net = make_mlp({ds.sample_dims(), arch.hidden, ds.num_classes, true}, rng());
  clf.meta.seed = seed;
  clf.meta.epochs = cfg.epochs;

  RmsProp opt({cfg.learning_rate, 0.9, 1e-8});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < train.size(); start += cfg.batch) {
      const std::size_t end = std::min(train.size(), start + cfg.batch);
      NetGradients batch_grad = clf.net.zero_gradients();
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t i = train[b];
        const auto y = ds.labels[i];
        const ForwardTrace trace = clf.net.forward_trace(ds.samples[i]);
        const Tensor& p = trace.output();
        const double py = std::max(p[y], kMinProb);
        loss_sum -= std::log(py);
        if (argmax(p.values()) == y) ++correct;
        Tensor dloss(p.dims());
        dloss[y] = -1.0 / py;
        accumulate(batch_grad.params, clf.net.gradients(trace, dloss).params);
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& g : batch_grad.params)
        for (auto& v : g.values()) v *= inv;
      opt.step(clf.net.parameters(), batch_grad.params);
    }
    const double mean_loss = loss_sum / static_cast<double>(train.size());
    if (!std::isfinite(mean_loss)) throw NumericError("classifier training diverged at epoch " + std::to_string(epoch));
    clf.meta.log.push_back({epoch, mean_loss, static_cast<double>(correct) / static_cast<double>(train.size())});
  }
  clf.meta.final_accuracy = held_out.empty() ? accuracy(clf, ds.select(train)) : accuracy(clf, held_out);
  return clf;
}

double accuracy(const Classifier& clf, const LabeledDataset& ds) {
  if (ds.empty()) throw ConfigError("accuracy of an empty dataset is undefined");
  if (ds.num_classes > clf.num_classes) throw ConfigError("dataset label range exceeds classifier outputs");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (argmax(clf.scores(ds.samples[i]).values()) == ds.labels[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

void save_classifier(const std::filesystem::path& path, const Classifier& clf) {
  std::vector<NamedTensor> t;
  append_net(t, clf.net, "net.");
  t.push_back({"meta", Tensor(Dims{4}, {static_cast<double>(clf.num_classes), static_cast<double>(clf.meta.seed),
                                        static_cast<double>(clf.meta.epochs), clf.meta.final_accuracy})});
  save_weights(path, t);
}

Classifier load_classifier(const std::filesystem::path& path) {
  const auto t = load_weights(path);
  Classifier clf;
  clf.net = extract_net(t, "net.");
  const Tensor& meta = find_tensor(t, "meta");
  if (meta.size() != 4) throw FormatError("classifier meta tensor malformed");
  clf.num_classes = static_cast<std::size_t>(meta[0]);
  clf.meta.seed = static_cast<std::uint64_t>(meta[1]);
  clf.meta.epochs = static_cast<std::size_t>(meta[2]);
  clf.meta.final_accuracy = meta[3];
  if (!clf.net.is_classifier() || dims_product(clf.net.output_dims()) != clf.num_classes)
    throw FormatError("stored net is not a " + std::to_string(clf.num_classes) + "-class classifier");
  return clf;
}

void write_training_log_csv(std::ostream& os, const std::vector<EpochRecord>& log) {
  os << "epoch,loss,accuracy\n";
  os.precision(17);
  for (const auto& r : log) os << r.epoch << ',' << r.loss << ',' << r.accuracy << '\n';
}

Tensor QueryChannel::predict_scores(int account, const Tensor& x) {
  if (x.dims() != target_.input_dims())
    throw ShapeError("query dims " + dims_to_string(x.dims()) + " do not match model input " +
                     dims_to_string(target_.input_dims()));
  if (is_blocked(account)) throw BlockedAccountError(account);
  auto& counter = counters_[account];
  const QueryRecord record{account, counter, &x};
  ++counter;
  if (observer_) {
    observer_->on_query(record);
    if (observer_->is_blocked(account)) throw BlockedAccountError(account);
  }
  return target_.scores(x);
}

std::uint64_t QueryChannel::queries(int account) const {
  const auto it = counters_.find(account);
  return it == counters_.end() ? 0 : it->second;
}

std::uint64_t QueryChannel::total_queries() const {
  std::uint64_t n = 0;
  for (const auto& [_, c] : counters_) n += c;
  return n;
}

}  // namespace rpg
