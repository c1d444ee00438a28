#include "rpg/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "rpg/errors.hpp"

namespace rpg {

void DetectorConfig::validate() const {
  if (k < 1) throw ConfigError("detector k must be at least 1");
  if (!(threshold >= 0.0) || !std::isfinite(threshold)) throw ConfigError("detector threshold must be finite and >= 0");
}

double mean_knn_distance(const std::vector<std::vector<double>>& buffer, std::span<const double> query,
                         std::size_t k) {
  if (k == 0 || buffer.size() < k) throw ConfigError("mean_knn_distance needs at least k buffered embeddings");
  std::vector<double> d;
  d.reserve(buffer.size());
  for (const auto& e : buffer) d.push_back(l2_distance(e, query));
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
  // after nth_element the k smallest occupy [0, k) in some order; sort for a fixed summation order
  std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) s += d[i];
  return s / static_cast<double>(k);
}

ObserveOutcome observe_embedding(DetectorState& state, const DetectorConfig& cfg, std::span<const double> embedding) {
  ObserveOutcome out;
  out.buffer_before = state.buffer.size();
  ++state.queries;
  if (state.buffer.size() < cfg.k) {
    state.buffer.emplace_back(embedding.begin(), embedding.end());
  } else {
    out.mean_knn = mean_knn_distance(state.buffer, embedding, cfg.k);
    if (*out.mean_knn < cfg.threshold) {
      ++state.detections;
      state.buffer.clear();
      out.verdict = Verdict::flagged;
    } else {
      state.buffer.emplace_back(embedding.begin(), embedding.end());
    }
  }
  if (state.detections > state.queries / (cfg.k + 1))
    throw InvariantError("detection bound violated: D = " + std::to_string(state.detections) +
                         " > floor(Q / (k + 1)) with Q = " + std::to_string(state.queries));
  return out;
}

ObserveOutcome observe(DetectorState& state, const DetectorConfig& cfg, const SimilarityEncoder& enc, const Tensor& x) {
  const Tensor e = enc.embed(x);
  return observe_embedding(state, cfg, e.values());
}

DetectionStats detection_stats(std::uint64_t queries, std::uint64_t detections, std::size_t k) {
  if (queries == 0) throw ConfigError("detection statistics are undefined for Q = 0");
  if (detections > queries / (k + 1))
    throw InvariantError("D = " + std::to_string(detections) + " exceeds Q / (k + 1) = " +
                         std::to_string(queries / (k + 1)));
  DetectionStats s{queries, detections, 0.0, 0.0};
  s.sigma = static_cast<double>(detections) / static_cast<double>(queries);
  s.sigma_star = static_cast<double>(k + 1) * static_cast<double>(detections) / static_cast<double>(queries);
  return s;
}

DetectionStats stats(const DetectorState& state, std::size_t k) {
  return detection_stats(state.queries, state.detections, k);
}

void reset(DetectorState& state, ResetMode mode) {
  state.buffer.clear();
  if (mode == ResetMode::fresh_account) {
    state.queries = 0;
    state.detections = 0;
  }
}

std::vector<double> stream_knn_distances(const std::vector<std::vector<double>>& embeddings, std::size_t k) {
  if (k == 0) throw ConfigError("k must be at least 1");
  std::vector<double> out;
  if (embeddings.size() <= k) return out;
  out.reserve(embeddings.size() - k);
  std::vector<double> d;
  for (std::size_t i = k; i < embeddings.size(); ++i) {
    d.clear();
    for (std::size_t j = 0; j < i; ++j) d.push_back(l2_distance(embeddings[j], embeddings[i]));
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
    std::sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k));
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += d[j];
    out.push_back(s / static_cast<double>(k));
  }
  return out;
}

double threshold_for_fpr(std::vector<double> distances, double target_fpr) {
  if (distances.empty()) throw ConfigError("no distances to calibrate on");
  if (!(target_fpr >= 0.0 && target_fpr <= 1.0)) throw ConfigError("target FPR must lie in [0, 1]");
  std::sort(distances.begin(), distances.end());
  const auto n = distances.size();
  const auto m = static_cast<std::size_t>(std::floor(target_fpr * static_cast<double>(n)));
  if (m >= n) return std::nextafter(distances.back(), std::numeric_limits<double>::infinity());
  // strict "<" flags exactly the entries below distances[m]: at most m of them
  return distances[m];
}

double flagged_fraction(const std::vector<double>& distances, double threshold) {
  if (distances.empty()) return 0.0;
  const auto flagged = std::count_if(distances.begin(), distances.end(), [&](double d) { return d < threshold; });
  return static_cast<double>(flagged) / static_cast<double>(distances.size());
}

CalibrationReport calibrate_threshold(const SimilarityEncoder& enc, const LabeledDataset& benign, std::size_t k,
                                      double target_fpr, std::uint64_t seed) {
  if (benign.size() <= k)
    throw ConfigError("calibration needs more than k = " + std::to_string(k) + " benign samples");
  std::vector<std::size_t> order(benign.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<double>> emb;
  emb.reserve(order.size());
  for (auto i : order) {
    const Tensor e = enc.embed(benign.samples[i]);
    emb.emplace_back(e.values().begin(), e.values().end());
  }
  const auto distances = stream_knn_distances(emb, k);
  CalibrationReport r;
  r.k = k;
  r.target_fpr = target_fpr;
  r.threshold = threshold_for_fpr(distances, target_fpr);
  r.achieved_fpr = flagged_fraction(distances, r.threshold);
  r.recorded = distances.size();
  return r;
}

void write_calibration_csv(std::ostream& os, const CalibrationReport& report) {
  os << "k,target_fpr,rho,achieved_fpr\n";
  os.precision(17);
  os << report.k << ',' << report.target_fpr << ',' << report.threshold << ',' << report.achieved_fpr << '\n';
}

DetectionLog::DetectionLog(std::ostream& os) : os_(os) {
  os_ << "account,query_index,buffer_size_before,mean_knn_distance,verdict\n";
  os_.precision(17);
}

void DetectionLog::record(int account, std::uint64_t query_index, const ObserveOutcome& outcome) {
  os_ << account << ',' << query_index << ',' << outcome.buffer_before << ',';
  if (outcome.mean_knn)
    os_ << *outcome.mean_knn;
  else
    os_ << "warmup";
  os_ << ',' << (outcome.verdict == Verdict::flagged ? "flagged" : "pass") << '\n';
}

StatefulDetector::StatefulDetector(const SimilarityEncoder& encoder, DetectorConfig cfg, DetectionLog* log)
    : encoder_(encoder), cfg_(cfg), log_(log) {
  cfg_.validate();
}

void StatefulDetector::on_query(const QueryRecord& record) {
  auto& st = states_[record.account];
  const auto outcome = observe(st, cfg_, encoder_, *record.input);
  if (log_) log_->record(record.account, record.sequence_index, outcome);
  if (outcome.verdict == Verdict::flagged && cfg_.ban_on_detect) banned_.insert(record.account);
}

const DetectorState& StatefulDetector::state(int account) const {
  static const DetectorState empty;
  const auto it = states_.find(account);
  return it == states_.end() ? empty : it->second;
}

std::uint64_t StatefulDetector::total_queries() const {
  std::uint64_t n = 0;
  for (const auto& [_, s] : states_) n += s.queries;
  return n;
}

std::uint64_t StatefulDetector::total_detections() const {
  std::uint64_t n = 0;
  for (const auto& [_, s] : states_) n += s.detections;
  return n;
}

DetectionStats StatefulDetector::totals() const { return detection_stats(total_queries(), total_detections(), cfg_.k); }

}  // namespace rpg
