#include "rpg/config.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <fstream>
#include <ostream>
#include <sstream>
#include <variant>

#include "rpg/errors.hpp"

namespace rpg {
namespace {

struct U64Field {
  std::uint64_t ScenarioConfig::*ptr;
};

using FieldPtr = std::variant<std::size_t ScenarioConfig::*, U64Field, double ScenarioConfig::*,
                              bool ScenarioConfig::*, std::string ScenarioConfig::*,
                              std::vector<std::size_t> ScenarioConfig::*>;

struct FieldEntry {
  const char* section;
  const char* key;
  FieldPtr field;
};

const std::vector<FieldEntry>& registry() {
  using C = ScenarioConfig;
  static const std::vector<FieldEntry> entries{
      {"scenario", "scenario", &C::scenario},
      {"scenario", "seed", U64Field{&C::seed}},
      {"scenario", "repeats", &C::repeats},
      {"data", "input_size", &C::input_size},
      {"data", "target_size", &C::target_size},
      {"data", "channels", &C::channels},
      {"data", "source_classes", &C::source_classes},
      {"data", "target_classes", &C::target_classes},
      {"data", "group_size", &C::group_size},
      {"data", "source_per_class", &C::source_per_class},
      {"data", "benign_classes", &C::benign_classes},
      {"data", "benign_per_class", &C::benign_per_class},
      {"data", "train_sizes", &C::train_sizes},
      {"data", "test_size", &C::test_size},
      {"models", "hidden", &C::hidden},
      {"models", "surrogate_hidden", &C::surrogate_hidden},
      {"models", "classifier_epochs", &C::classifier_epochs},
      {"models", "classifier_lr", &C::classifier_lr},
      {"attack", "eta", &C::eta},
      {"attack", "epochs", &C::epochs},
      {"attack", "batch", &C::batch},
      {"attack", "gamma", &C::gamma},
      {"attack", "raw_input_update", &C::raw_input_update},
      {"attack", "q_grid", &C::q_grid},
      {"attack", "table3_q", &C::table3_q},
      {"attack", "mu", &C::mu},
      {"attack", "b", &C::b},
      {"attack", "mask_directions", &C::mask_directions},
      {"attack", "finetune_q", &C::finetune_q},
      {"attack", "finetune_epochs", &C::finetune_epochs},
      {"attack", "rotate_accounts", &C::rotate_accounts},
      {"attack", "max_accounts", &C::max_accounts},
      {"encoder", "encoder_pool", &C::encoder_pool},
      {"encoder", "encoder_hidden", &C::encoder_hidden},
      {"encoder", "embedding", &C::embedding},
      {"encoder", "pairs", &C::pairs},
      {"encoder", "pair_balance", &C::pair_balance},
      {"encoder", "encoder_epochs", &C::encoder_epochs},
      {"encoder", "encoder_lr", &C::encoder_lr},
      {"encoder", "weight_decay", &C::weight_decay},
      {"encoder", "margin", &C::margin},
      {"detector", "k", &C::k},
      {"detector", "target_fpr", &C::target_fpr},
      {"detector", "detector", &C::detector},
  };
  return entries;
}

const FieldEntry& find_entry(const std::string& key) {
  for (const auto& e : registry())
    if (key == e.key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n\"");
  const auto e = s.find_last_not_of(" \t\r\n\"");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ConfigError("config key '" + key + "': cannot parse '" + raw + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& raw) {
  const std::string s = trim(raw);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + raw + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') s.erase(0, 1);
  if (!s.empty() && s.back() == ']') s.pop_back();
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (trim(item).empty()) continue;
    out.push_back(parse_number<std::size_t>(key, item));
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& e : registry()) keys.emplace_back(e.key);
  return keys;
}

void set_config_value(ScenarioConfig& cfg, const std::string& key, const std::string& value) {
  const auto& entry = find_entry(key);
  std::visit(
      [&](auto field) {
        using F = decltype(field);
        if constexpr (std::is_same_v<F, std::size_t ScenarioConfig::*>)
          cfg.*field = parse_number<std::size_t>(key, value);
        else if constexpr (std::is_same_v<F, U64Field>)
          cfg.*(field.ptr) = parse_number<std::uint64_t>(key, value);
        else if constexpr (std::is_same_v<F, double ScenarioConfig::*>)
          cfg.*field = parse_number<double>(key, value);
        else if constexpr (std::is_same_v<F, bool ScenarioConfig::*>)
          cfg.*field = parse_bool(key, value);
        else if constexpr (std::is_same_v<F, std::string ScenarioConfig::*>)
          cfg.*field = trim(value);
        else
          cfg.*field = parse_list(key, value);
      },
      entry.field);
}

std::string get_config_value(const ScenarioConfig& cfg, const std::string& key) {
  const auto& entry = find_entry(key);
  return std::visit(
      [&](auto field) -> std::string {
        using F = decltype(field);
        if constexpr (std::is_same_v<F, std::size_t ScenarioConfig::*>)
          return std::to_string(cfg.*field);
        else if constexpr (std::is_same_v<F, U64Field>)
          return std::to_string(cfg.*(field.ptr));
        else if constexpr (std::is_same_v<F, double ScenarioConfig::*>)
          return format_double(cfg.*field);
        else if constexpr (std::is_same_v<F, bool ScenarioConfig::*>)
          return cfg.*field ? "true" : "false";
        else if constexpr (std::is_same_v<F, std::string ScenarioConfig::*>)
          return cfg.*field;
        else {
          std::string s;
          for (auto v : cfg.*field) s += (s.empty() ? "" : ",") + std::to_string(v);
          return s;
        }
      },
      entry.field);
}

void apply_config_stream(ScenarioConfig& cfg, std::istream& is) {
  CLI::ConfigINI ini;
  std::vector<CLI::ConfigItem> items;
  try {
    items = ini.from_config(is);
  } catch (const CLI::Error& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    std::string value;
    for (const auto& in : item.inputs) value += (value.empty() ? "" : ",") + in;
    set_config_value(cfg, item.name, value);
  }
}

void apply_config_file(ScenarioConfig& cfg, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  apply_config_stream(cfg, is);
}

void validate(const ScenarioConfig& cfg) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  need(cfg.scenario == "table3" || cfg.scenario == "table4" || cfg.scenario == "table5" || cfg.scenario == "calibrate",
       "scenario must be one of table3, table4, table5, calibrate");
  need(cfg.repeats >= 1, "repeats must be at least 1");
  need(cfg.target_size > 0 && cfg.target_size < cfg.input_size, "target_size must be in (0, input_size)");
  need(cfg.channels > 0, "channels must be positive");
  need(cfg.target_classes >= 1 && cfg.group_size >= 1, "target_classes and group_size must be positive");
  need(cfg.target_classes * cfg.group_size <= cfg.source_classes, "target_classes * group_size exceeds source_classes");
  need(!cfg.train_sizes.empty(), "train_sizes must not be empty");
  for (auto tr : cfg.train_sizes) need(tr >= cfg.batch && tr > 0, "every train size must be at least the batch size");
  need(cfg.test_size > 0, "test_size must be positive");
  need(cfg.batch > 0, "batch must be positive");
  need(cfg.eta > 0.0, "eta must be positive");
  need(cfg.mu > 0.0, "mu must be positive");
  need(cfg.b >= 0.0, "b must be non-negative (0 selects d*d*c)");
  need(cfg.gamma >= 0.0, "gamma must be non-negative");
  need(!cfg.q_grid.empty(), "q_grid must not be empty");
  for (auto q : cfg.q_grid) need(q >= 1, "every q must be at least 1");
  for (auto q : cfg.finetune_q) need(q >= 1, "every fine-tuning q must be at least 1");
  need(cfg.table3_q >= 1, "table3_q must be at least 1");
  need(cfg.k >= 1, "k must be at least 1");
  need(cfg.target_fpr >= 0.0 && cfg.target_fpr <= 1.0, "target_fpr must lie in [0, 1]");
  need(cfg.margin > 0.0, "margin must be positive");
  need(cfg.embedding > 0, "embedding must be positive");
  need(cfg.pair_balance >= 0.0 && cfg.pair_balance <= 1.0, "pair_balance must lie in [0, 1]");
  need(cfg.max_accounts >= 1, "max_accounts must be at least 1");
}

void write_config(std::ostream& os, const ScenarioConfig& cfg) {
  std::string section;
  for (const auto& e : registry()) {
    if (section != e.section) {
      section = e.section;
      os << (os.tellp() > 0 ? "\n" : "") << '[' << section << "]\n";
    }
    os << e.key << " = " << get_config_value(cfg, e.key) << '\n';
  }
}

}  // namespace rpg
