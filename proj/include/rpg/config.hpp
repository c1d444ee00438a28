#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace rpg {

/// Every tunable of a scenario run. Keys (see config_keys()) are flat; a config file groups
/// them in INI sections purely for readability, and any key may be overridden on the
/// command line by a flag of the same name.
struct ScenarioConfig {
  std::string scenario = "table4";  // table3 | table4 | table5 | calibrate
  std::uint64_t seed = 0;
  std::size_t repeats = 1;  // attack seeds seed, seed+1, ...

  // data
  std::size_t input_size = 32;   // d
  std::size_t target_size = 16;  // d'
  std::size_t channels = 3;
  std::size_t source_classes = 12;   // s
  std::size_t target_classes = 2;    // t
  std::size_t group_size = 6;        // |K|
  std::size_t source_per_class = 60;
  std::size_t benign_classes = 120;    // grating families in benign traffic
  std::size_t benign_per_class = 30;   // encoder pairs + calibration stream
  std::vector<std::size_t> train_sizes{200, 400};  // Tr
  std::size_t test_size = 200;                     // Ts

  // models
  std::vector<std::size_t> hidden{64};
  std::vector<std::size_t> surrogate_hidden{96};
  std::size_t classifier_epochs = 15;
  double classifier_lr = 1e-3;

  // attack
  double eta = 0.5;
  std::size_t epochs = 10;  // N
  std::size_t batch = 24;   // B
  double gamma = 2.0;
  bool raw_input_update = false;
  std::vector<std::size_t> q_grid{5, 15, 30};
  std::size_t table3_q = 5;
  double mu = 0.1;
  double b = 0.0;  // 0 = d*d*c
  bool mask_directions = false;
  std::vector<std::size_t> finetune_q{5, 15};
  std::size_t finetune_epochs = 4;
  bool rotate_accounts = false;
  std::size_t max_accounts = 100000;

  // encoder
  std::size_t encoder_pool = 0;  // 2x2 average-pooling stages before the dense layers
  std::vector<std::size_t> encoder_hidden{256};
  std::size_t embedding = 32;  // e
  std::size_t pairs = 2000;
  double pair_balance = 0.5;
  std::size_t encoder_epochs = 5;
  double encoder_lr = 1e-4;
  double weight_decay = 1e-6;
  double margin = 1.0;  // z

  // detector
  std::size_t k = 10;
  double target_fpr = 0.001;
  bool detector = true;

  std::size_t attack_train_size() const { return train_sizes.back(); }
};

std::vector<std::string> config_keys();

/// Parses `value` into the field named `key`; ConfigError for unknown keys or bad values.
void set_config_value(ScenarioConfig& cfg, const std::string& key, const std::string& value);
std::string get_config_value(const ScenarioConfig& cfg, const std::string& key);

/// Applies an INI-style file: `[section]` headers, `key = value` lines, `#`/`;` comments.
void apply_config_file(ScenarioConfig& cfg, const std::filesystem::path& path);
void apply_config_stream(ScenarioConfig& cfg, std::istream& is);

/// Throws ConfigError on inconsistent settings.
void validate(const ScenarioConfig& cfg);

void write_config(std::ostream& os, const ScenarioConfig& cfg);

}  // namespace rpg
