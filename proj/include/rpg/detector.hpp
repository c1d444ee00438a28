#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <vector>

#include "rpg/data.hpp"
#include "rpg/encoder.hpp"
#include "rpg/models.hpp"

namespace rpg {

struct DetectorConfig {
  std::size_t k = 10;
  double threshold = 0.0;  // rho; a query is flagged iff its mean k-NN distance < rho
  bool ban_on_detect = false;

  void validate() const;
};

enum class Verdict { pass, flagged };

/// Per-account history. The buffer is unbounded and emptied on every detection.
struct DetectorState {
  std::vector<std::vector<double>> buffer;
  std::uint64_t queries = 0;     // Q
  std::uint64_t detections = 0;  // D
};

struct ObserveOutcome {
  Verdict verdict = Verdict::pass;
  std::size_t buffer_before = 0;
  std::optional<double> mean_knn;  // empty during warm-up
};

/// Mean of the k smallest distances from `query` to the buffered embeddings.
double mean_knn_distance(const std::vector<std::vector<double>>& buffer, std::span<const double> query, std::size_t k);

/// Detector step on an already-embedded query. Warm-up (fewer than k buffered) stores and
/// passes; otherwise a mean k-NN distance below the threshold counts a detection and clears
/// the buffer, the query included. Q increments on every call.
ObserveOutcome observe_embedding(DetectorState& state, const DetectorConfig& cfg, std::span<const double> embedding);
ObserveOutcome observe(DetectorState& state, const DetectorConfig& cfg, const SimilarityEncoder& enc, const Tensor& x);

struct DetectionStats {
  std::uint64_t queries = 0;     // Q
  std::uint64_t detections = 0;  // D
  double sigma = 0.0;            // D / Q
  double sigma_star = 0.0;       // (k + 1) * sigma
};

/// ConfigError when Q == 0.
DetectionStats detection_stats(std::uint64_t queries, std::uint64_t detections, std::size_t k);
DetectionStats stats(const DetectorState& state, std::size_t k);

enum class ResetMode { keep_counters, fresh_account };
void reset(DetectorState& state, ResetMode mode);

struct CalibrationReport {
  std::size_t k = 0;
  double target_fpr = 0.0;
  double threshold = 0.0;
  double achieved_fpr = 0.0;  // no-reset re-stream of the same sequence
  std::size_t recorded = 0;
};

/// Streams embeddings in order without resets; entry i-k is the mean k-NN distance of
/// query i (i >= k) against all earlier queries.
std::vector<double> stream_knn_distances(const std::vector<std::vector<double>>& embeddings, std::size_t k);

/// Lower-tail quantile: the returned threshold flags at most floor(fpr * n) of `distances`.
double threshold_for_fpr(std::vector<double> distances, double target_fpr);
double flagged_fraction(const std::vector<double>& distances, double threshold);

CalibrationReport calibrate_threshold(const SimilarityEncoder& enc, const LabeledDataset& benign, std::size_t k,
                                      double target_fpr, std::uint64_t seed);
void write_calibration_csv(std::ostream& os, const CalibrationReport& report);

/// Rows: account,query_index,buffer_size_before,mean_knn_distance,verdict.
class DetectionLog {
 public:
  explicit DetectionLog(std::ostream& os);
  void record(int account, std::uint64_t query_index, const ObserveOutcome& outcome);

 private:
  std::ostream& os_;
};

/// QueryObserver running one DetectorState per account.
class StatefulDetector final : public QueryObserver {
 public:
  StatefulDetector(const SimilarityEncoder& encoder, DetectorConfig cfg, DetectionLog* log = nullptr);

  bool is_blocked(int account) const override { return banned_.contains(account); }
  void on_query(const QueryRecord& record) override;

  const DetectorConfig& config() const noexcept { return cfg_; }
  const DetectorState& state(int account) const;
  /// Summed over all accounts.
  DetectionStats totals() const;
  std::uint64_t total_queries() const;
  std::uint64_t total_detections() const;

 private:
  const SimilarityEncoder& encoder_;
  DetectorConfig cfg_;
  DetectionLog* log_;
  std::map<int, DetectorState> states_;
  std::set<int> banned_;
};

}  // namespace rpg
