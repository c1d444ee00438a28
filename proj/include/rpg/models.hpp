#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <vector>

#include "rpg/data.hpp"
#include "rpg/nn.hpp"

namespace rpg {

struct ArchConfig {
  std::vector<std::size_t> hidden{128};
};

struct ClassifierTrainConfig {
  std::size_t epochs = 15;
  std::size_t batch = 32;
  double learning_rate = 1e-3;  // RMSprop
  double holdout_fraction = 0.2;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double final_accuracy = 0.0;  // on the held-out split
  std::vector<EpochRecord> log;
};

/// Softmax classifier over source-domain images.
struct Classifier {
  FeedforwardNet net;
  std::size_t num_classes = 0;
  TrainingMetadata meta;

  const Dims& input_dims() const { return net.input_dims(); }
  Tensor scores(const Tensor& x) const { return net.forward(x); }
};

Classifier train_source_classifier(const LabeledDataset& ds, const ArchConfig& arch,
                                   const ClassifierTrainConfig& cfg, std::uint64_t seed);

/// Fraction of argmax-correct predictions; ConfigError on an empty dataset.
double accuracy(const Classifier& clf, const LabeledDataset& ds);

void save_classifier(const std::filesystem::path& path, const Classifier& clf);
Classifier load_classifier(const std::filesystem::path& path);
void write_training_log_csv(std::ostream& os, const std::vector<EpochRecord>& log);

struct QueryRecord {
  int account = 0;
  std::uint64_t sequence_index = 0;  // per account, starting at 0
  const Tensor* input = nullptr;     // valid only during the observer callback
};

/// Interception point for every query reaching the model.
class QueryObserver {
 public:
  virtual ~QueryObserver() = default;
  virtual bool is_blocked(int account) const = 0;
  virtual void on_query(const QueryRecord& record) = 0;
};

/// Score-only access to a model. Black-box attacks are written against this interface.
class ScoreOracle {
 public:
  virtual ~ScoreOracle() = default;
  virtual Tensor predict_scores(int account, const Tensor& x) = 0;
  virtual const Dims& input_dims() const = 0;
  virtual std::size_t num_classes() const = 0;
};

/// Serves a classifier to accounts, counting queries and notifying an observer.
///
/// A query from a blocked account throws BlockedAccountError before evaluation. A query that
/// the observer bans while handling it is counted but also answered with BlockedAccountError.
class QueryChannel final : public ScoreOracle {
 public:
  explicit QueryChannel(const Classifier& target, QueryObserver* observer = nullptr)
      : target_(target), observer_(observer) {}

  Tensor predict_scores(int account, const Tensor& x) override;
  const Dims& input_dims() const override { return target_.input_dims(); }
  std::size_t num_classes() const override { return target_.num_classes; }

  std::uint64_t queries(int account) const;
  std::uint64_t total_queries() const;
  const std::map<int, std::uint64_t>& counters() const noexcept { return counters_; }
  bool is_blocked(int account) const { return observer_ && observer_->is_blocked(account); }

 private:
  const Classifier& target_;
  QueryObserver* observer_;
  std::map<int, std::uint64_t> counters_;
};

}  // namespace rpg
