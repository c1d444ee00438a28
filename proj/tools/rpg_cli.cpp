// rpg: data generation, training, attacks, detection and scenario reports.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "rpg/config.hpp"
#include "rpg/data.hpp"
#include "rpg/detector.hpp"
#include "rpg/encoder.hpp"
#include "rpg/errors.hpp"
#include "rpg/gradcheck.hpp"
#include "rpg/harness.hpp"
#include "rpg/models.hpp"
#include "rpg/reprogram.hpp"
#include "rpg/zoattack.hpp"

namespace fs = std::filesystem;
using namespace rpg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;

struct Common {
  std::string config_file;
  std::map<std::string, std::string> overrides;
  bool seed_given = false;
  bool quiet = false;

  ScenarioConfig load() const {
    ScenarioConfig cfg;
    if (!config_file.empty()) apply_config_file(cfg, config_file);
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
    validate(cfg);
    return cfg;
  }
  std::ostream* progress() const { return quiet ? nullptr : &std::cerr; }
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  return os;
}

/// Target file layout: the first max(Tr) samples train, the next Ts test.
struct TargetSplit {
  LabeledDataset train;
  LabeledDataset test;
};

TargetSplit split_target(const ScenarioConfig& cfg, const LabeledDataset& all) {
  const std::size_t max_tr = *std::max_element(cfg.train_sizes.begin(), cfg.train_sizes.end());
  if (all.size() < max_tr + cfg.test_size)
    throw ConfigError("target dataset holds " + std::to_string(all.size()) + " samples, need " +
                      std::to_string(max_tr + cfg.test_size));
  return {all.slice(0, cfg.attack_train_size()), all.slice(max_tr, cfg.test_size)};
}

ClassifierTrainConfig classifier_config(const ScenarioConfig& cfg) {
  return {cfg.classifier_epochs, 32, cfg.classifier_lr, 0.2};
}

void print_program_result(const char* tag, double acc, std::uint64_t queries, std::optional<DetectionStats> det) {
  std::cout << tag << " accuracy " << acc;
  if (queries) std::cout << " Q " << queries;
  if (det) std::cout << " D " << det->detections << " sigma_star " << det->sigma_star;
  std::cout << '\n';
}

int selftest() {
  int failures = 0;
  auto check = [&](bool ok, const std::string& what) {
    std::cout << (ok ? "ok    " : "FAIL  ") << what << '\n';
    if (!ok) ++failures;
  };
  const auto s1 = detection_stats(110400, 1810, 50);
  check(std::fabs(s1.sigma_star - 0.83605) < 1e-4, "sigma_star for D=1810, Q=110400, k=50");
  const auto s2 = detection_stats(51480, 980, 50);
  check(std::fabs(s2.sigma_star - 0.97086) < 1e-4, "sigma_star for D=980, Q=51480, k=50");

  const auto net = make_mlp({Dims{4, 4, 2}, {8, 6}, 5, true}, 11);
  Tensor x(Dims{4, 4, 2});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& v : x.values()) v = u(rng);
  check(finite_diff_check(net, x, 1e-4).passed, "network gradient against central differences");

  DetectorState st;
  const DetectorConfig dc{3, 0.5, false};
  const std::vector<double> e{0.25, -0.5};
  for (int i = 0; i < 4; ++i) observe_embedding(st, dc, e);
  check(st.detections == 1 && st.buffer.empty(), "four identical queries with k=3 give one detection");
  check(std::fabs(focal_loss(0.5, {2.0}) - 0.25 * std::log(2.0)) < 1e-12, "focal loss at p=0.5");
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Black-box reprogramming attacks and a stateful query detector at desk scale"};
  app.require_subcommand(1);
  app.fallthrough();

  Common common;
  app.add_option("--config", common.config_file, "INI config file; flags override its values")->check(CLI::ExistingFile);
  app.add_flag("--quiet", common.quiet, "Suppress progress messages");
  for (const auto& key : config_keys()) {
    app.add_option_function<std::string>(
           "--" + key, [&common, key](const std::string& v) { common.overrides[key] = v; },
           "config key '" + key + "'")
        ->type_name("VALUE");
  }

  std::string out, out_dir = "artifacts", data, model, surrogate, encoder, log_file, trace_file, det_log_file,
                   program_file, format = "console", in_program;
  std::optional<double> rho;
  std::size_t q_opt = 0;
  bool use_surrogate_arch = false;

  auto* gen = app.add_subcommand("gen-data", "Write source, benign and target datasets");
  gen->add_option("--out-dir", out_dir, "Output directory")->capture_default_str();

  auto* tsrc = app.add_subcommand("train-source", "Train a source-domain classifier");
  tsrc->add_option("--data", data, "Source dataset (RPGD)")->required();
  tsrc->add_option("--out", out, "Weights file")->required();
  tsrc->add_option("--log", log_file, "Per-epoch training log CSV");
  tsrc->add_flag("--surrogate", use_surrogate_arch, "Use surrogate_hidden and the surrogate model seed");

  auto* tenc = app.add_subcommand("train-encoder", "Train the siamese similarity encoder on benign data");
  tenc->add_option("--data", data, "Benign dataset (RPGD)")->required();
  tenc->add_option("--out", out, "Weights file")->required();
  tenc->add_option("--log", log_file, "Per-epoch training log CSV");

  auto* cal = app.add_subcommand("calibrate", "Pick the detector threshold for target_fpr");
  cal->add_option("--encoder", encoder, "Encoder weights")->required();
  cal->add_option("--data", data, "Benign dataset (RPGD)")->required();
  cal->add_option("--out", out, "Calibration report CSV");

  auto* wb = app.add_subcommand("attack-whitebox", "Reprogram with exact gradients");
  auto* bb = app.add_subcommand("attack-blackbox", "Reprogram through score queries");
  auto* sur = app.add_subcommand("attack-surrogate", "Reprogram a surrogate, then fine-tune through queries");
  for (auto* sc : {wb, bb, sur}) {
    sc->add_option("--model", model, "Target classifier weights")->required();
    sc->add_option("--data", data, "Target dataset (RPGD)")->required();
    sc->add_option("--out", program_file, "Program weights file");
  }
  for (auto* sc : {bb, sur}) {
    sc->add_option("--q", q_opt, "Directions per estimate (defaults to the first of q_grid / finetune_q)");
    sc->add_option("--encoder", encoder, "Encoder weights; attaches the stateful detector");
    sc->add_option("--rho", rho, "Detector threshold; calibrated on generated benign data when omitted");
    sc->add_option("--trace", trace_file, "Per-query attack trace CSV");
    sc->add_option("--detection-log", det_log_file, "Per-query detector log CSV");
  }
  bb->add_option("--init", in_program, "Start from this program");
  sur->add_option("--surrogate-model", surrogate, "Surrogate classifier weights")->required();

  auto* rep = app.add_subcommand("report", "Run the configured scenario and emit its table");
  rep->add_option("--out", out, "CSV output path");
  rep->add_option("--format", format, "Output format: console or csv")
      ->check(CLI::IsMember({"console", "csv"}))
      ->capture_default_str();

  auto* self = app.add_subcommand("selftest", "Quick arithmetic and gradient checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  common.seed_given = common.overrides.contains("seed");

  try {
    if (self->parsed()) return selftest();
    if (!common.seed_given) throw ConfigError("--seed is required for this command");
    const ScenarioConfig cfg = common.load();
    const SeedPlan seeds = SeedPlan::from(cfg.seed);

    if (gen->parsed()) {
      fs::create_directories(out_dir);
      const SourceDomainSpec src{cfg.source_classes, cfg.source_per_class, cfg.input_size, cfg.channels};
      save_dataset(fs::path(out_dir) / "source.rpgd", gen_source_dataset(seeds.source_data, src));
      save_dataset(fs::path(out_dir) / "surrogate_source.rpgd", gen_source_dataset(seeds.surrogate_data, src));
      save_dataset(fs::path(out_dir) / "benign.rpgd",
                   gen_source_dataset(seeds.benign_data,
                                      {cfg.benign_classes, cfg.benign_per_class, cfg.input_size, cfg.channels}));
      const std::size_t max_tr = *std::max_element(cfg.train_sizes.begin(), cfg.train_sizes.end());
      const std::size_t per = (max_tr + cfg.test_size + cfg.target_classes - 1) / cfg.target_classes;
      save_dataset(fs::path(out_dir) / "target.rpgd",
                   gen_target_dataset(seeds.target_data, {cfg.target_classes, per, cfg.target_size, cfg.channels}));
      auto os = open_out(fs::path(out_dir) / "config.ini");
      write_config(os, cfg);
      std::cout << "wrote datasets to " << out_dir << '\n';
      return 0;
    }

    if (tsrc->parsed()) {
      const auto ds = load_dataset(data);
      const auto clf = train_source_classifier(ds, {use_surrogate_arch ? cfg.surrogate_hidden : cfg.hidden},
                                               classifier_config(cfg),
                                               use_surrogate_arch ? seeds.surrogate_model : seeds.target_model);
      save_classifier(out, clf);
      if (!log_file.empty()) {
        auto os = open_out(log_file);
        write_training_log_csv(os, clf.meta.log);
      }
      std::cout << "holdout accuracy " << clf.meta.final_accuracy << '\n';
      return 0;
    }

    if (tenc->parsed()) {
      const auto ds = load_dataset(data);
      const auto pairs = make_pairs(ds, seeds.pairs, cfg.pairs, cfg.pair_balance);
      EncoderTrainConfig etc;
      etc.epochs = cfg.encoder_epochs;
      etc.learning_rate = cfg.encoder_lr;
      etc.weight_decay = cfg.weight_decay;
      etc.contrastive.margin = cfg.margin;
      const auto enc = train_encoder(pairs, {cfg.encoder_pool, cfg.encoder_hidden, cfg.embedding}, etc, seeds.encoder);
      save_encoder(out, enc);
      if (!log_file.empty()) {
        auto os = open_out(log_file);
        write_encoder_log_csv(os, enc.log);
      }
      const auto s = summarize_pair_distances(enc, pairs);
      std::cout << "mean distance similar " << s.similar_mean << " dissimilar " << s.dissimilar_mean << '\n';
      return 0;
    }

    if (cal->parsed()) {
      const auto report = calibrate_threshold(load_encoder(encoder), load_dataset(data), cfg.k, cfg.target_fpr,
                                              seeds.calibration);
      write_calibration_csv(std::cout, report);
      if (!out.empty()) {
        auto os = open_out(out);
        write_calibration_csv(os, report);
      }
      return 0;
    }

    if (wb->parsed() || bb->parsed() || sur->parsed()) {
      const auto target_model = load_classifier(model);
      const auto split = split_target(cfg, load_dataset(data));
      const auto mapping = LabelMapping::consecutive(cfg.source_classes, cfg.target_classes, cfg.group_size);
      const PaddingSpec padding{cfg.target_size, cfg.input_size, cfg.channels};
      Environment env;
      env.cfg = cfg;
      const auto attack_seed = SeedPlan::attack(cfg.seed, 0);

      if (wb->parsed()) {
        const auto r = whitebox_reprogram(target_model, split.train, mapping, padding, env.reprogram_config(attack_seed));
        if (!program_file.empty()) save_program(program_file, r.program);
        print_program_result("white-box", reprogram_accuracy(r.program, split.test, mapping, target_model), 0,
                             std::nullopt);
        return 0;
      }

      std::optional<SimilarityEncoder> enc;
      std::optional<StatefulDetector> det;
      std::ofstream det_os;
      std::optional<DetectionLog> det_log;
      if (!encoder.empty()) {
        enc = load_encoder(encoder);
        if (!rho) {
          const auto benign = gen_source_dataset(
              seeds.benign_data, {cfg.benign_classes, cfg.benign_per_class, cfg.input_size, cfg.channels});
          rho = calibrate_threshold(*enc, benign, cfg.k, cfg.target_fpr, seeds.calibration).threshold;
          std::cerr << "calibrated rho " << *rho << '\n';
        }
        if (!det_log_file.empty()) {
          det_os = open_out(det_log_file);
          det_log.emplace(det_os);
        }
        det.emplace(*enc, DetectorConfig{cfg.k, *rho, cfg.rotate_accounts}, det_log ? &*det_log : nullptr);
      }
      QueryChannel channel(target_model, det ? &*det : nullptr);
      std::ofstream trace_os;
      std::optional<AttackTrace> trace;
      if (!trace_file.empty()) {
        trace_os = open_out(trace_file);
        trace.emplace(trace_os);
      }

      BlackboxResult r;
      if (bb->parsed()) {
        const auto bc = env.blackbox_config(attack_seed, q_opt ? q_opt : cfg.q_grid.front());
        std::optional<AdversarialProgram> init;
        if (!in_program.empty()) init = load_program(in_program);
        r = blackbox_reprogram(channel, split.train, mapping, padding, bc, init ? &*init : nullptr,
                               trace ? &*trace : nullptr);
      } else {
        const auto sur_model = load_classifier(surrogate);
        const auto s = whitebox_reprogram(sur_model, split.train, mapping, padding, env.reprogram_config(attack_seed));
        std::cout << "surrogate accuracy " << reprogram_accuracy(s.program, split.test, mapping, sur_model)
                  << " transfer accuracy " << reprogram_accuracy(s.program, split.test, mapping, target_model) << '\n';
        auto bc = env.blackbox_config(attack_seed, q_opt ? q_opt : cfg.finetune_q.front());
        bc.base.epochs = cfg.finetune_epochs;
        r = finetune_from_surrogate(s.program, channel, split.train, mapping, bc, trace ? &*trace : nullptr);
      }
      if (!program_file.empty()) save_program(program_file, r.program);
      std::optional<DetectionStats> ds;
      if (det && det->total_queries() > 0) ds = det->totals();
      print_program_result("black-box", reprogram_accuracy(r.program, split.test, mapping, target_model),
                           r.budget.queries, ds);
      if (r.aborted) std::cout << "aborted: all accounts blocked\n";
      return 0;
    }

    if (rep->parsed()) {
      const auto report = run_scenario(cfg, common.progress());
      if (!out.empty()) emit_report(fs::path(out), report, ReportFormat::csv);
      emit_report(std::cout, report, format == "csv" ? ReportFormat::csv : ReportFormat::console);
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
