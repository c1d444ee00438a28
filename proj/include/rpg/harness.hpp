#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rpg/config.hpp"
#include "rpg/detector.hpp"
#include "rpg/encoder.hpp"
#include "rpg/models.hpp"
#include "rpg/reprogram.hpp"
#include "rpg/zoattack.hpp"

namespace rpg {

/// Seeds of every artifact, derived from ScenarioConfig::seed.
struct SeedPlan {
  std::uint64_t source_data;
  std::uint64_t target_data;
  std::uint64_t target_model;
  std::uint64_t surrogate_data;
  std::uint64_t surrogate_model;
  std::uint64_t benign_data;
  std::uint64_t pairs;
  std::uint64_t encoder;
  std::uint64_t calibration;

  static SeedPlan from(std::uint64_t seed);
  /// Attack seed of repeat r.
  static std::uint64_t attack(std::uint64_t seed, std::size_t repeat) { return seed + 100 + repeat; }
};

struct EnvironmentOptions {
  bool surrogate = false;
  bool detector = false;  // encoder + calibration
};

/// Everything a scenario needs besides the attack itself.
struct Environment {
  ScenarioConfig cfg;
  SeedPlan seeds{};
  LabelMapping mapping;
  PaddingSpec padding;
  LabeledDataset target_pool;  // first max(Tr) samples train, the next Ts test
  LabeledDataset target_test;
  Classifier target_model;
  Classifier surrogate_model;  // empty unless requested
  SimilarityEncoder encoder;   // empty unless requested
  PairDataset encoder_pairs;
  PairDataset held_out_pairs;
  CalibrationReport calibration;
  double restream_fpr = 0.0;  // flagged fraction on a fresh no-reset order of the calibration pool

  LabeledDataset train_set(std::size_t tr) const { return target_pool.slice(0, tr); }
  ReprogramConfig reprogram_config(std::uint64_t seed) const;
  BlackboxConfig blackbox_config(std::uint64_t seed, std::size_t q) const;
  DetectorConfig detector_config() const;
};

Environment build_environment(const ScenarioConfig& cfg, const EnvironmentOptions& opts, std::ostream* progress = nullptr);

/// Numeric table with named columns.
struct ScenarioReport {
  std::string scenario;
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const;  // ConfigError if absent
  double at(std::size_t row, const std::string& name) const { return rows.at(row).at(column(name)); }
};

ScenarioReport run_table3_analog(const Environment& env, std::ostream* progress = nullptr);
ScenarioReport run_table4_analog(const Environment& env, std::ostream* progress = nullptr);
ScenarioReport run_table5_analog(const Environment& env, std::ostream* progress = nullptr);
ScenarioReport calibration_report(const Environment& env);

/// Builds the environment the scenario needs and runs it.
ScenarioReport run_scenario(const ScenarioConfig& cfg, std::ostream* progress = nullptr);

enum class ReportFormat { csv, console };

void emit_report(std::ostream& os, const ScenarioReport& report, ReportFormat format);
void emit_report(const std::filesystem::path& path, const ScenarioReport& report, ReportFormat format);
ScenarioReport parse_report_csv(std::istream& is, std::string scenario = {});

/// Checks D <= floor(Q / (k + 1)), sigma_star in [0, 1] and sigma_star == (k + 1) D / Q
/// (to 1e-9) on every row carrying D, Q and k. Throws InvariantError.
void validate_report(const ScenarioReport& report);

/// Column means grouped by the value of `key` (rows with equal key values are averaged).
std::vector<std::pair<double, double>> grouped_mean(const ScenarioReport& report, const std::string& key,
                                                    const std::string& value);

}  // namespace rpg
