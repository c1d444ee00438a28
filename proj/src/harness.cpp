#include "rpg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "rpg/errors.hpp"

namespace rpg {

SeedPlan SeedPlan::from(std::uint64_t seed) {
  return {seed + 1, seed + 2, seed + 3, seed + 4, seed + 5, seed + 6, seed + 7, seed + 8, seed + 9};
}

ReprogramConfig Environment::reprogram_config(std::uint64_t seed) const {
  ReprogramConfig rc;
  rc.eta = cfg.eta;
  rc.epochs = cfg.epochs;
  rc.batch = cfg.batch;
  rc.seed = seed;
  rc.focal.gamma = cfg.gamma;
  rc.rule = cfg.raw_input_update ? UpdateRule::raw_input : UpdateRule::chain_rule;
  return rc;
}

BlackboxConfig Environment::blackbox_config(std::uint64_t seed, std::size_t q) const {
  BlackboxConfig bc;
  bc.base = reprogram_config(seed);
  bc.zo.q = q;
  bc.zo.mu = cfg.mu;
  bc.zo.b = cfg.b;
  bc.zo.mask_directions = cfg.mask_directions;
  bc.max_accounts = cfg.rotate_accounts ? cfg.max_accounts : 1;
  return bc;
}

DetectorConfig Environment::detector_config() const {
  DetectorConfig dc;
  dc.k = cfg.k;
  dc.threshold = cfg.detector ? calibration.threshold : 0.0;
  dc.ban_on_detect = cfg.rotate_accounts;
  return dc;
}

namespace {

void say(std::ostream* progress, const std::string& msg) {
  if (progress) *progress << msg << std::endl;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

Environment build_environment(const ScenarioConfig& cfg, const EnvironmentOptions& opts, std::ostream* progress) {
  validate(cfg);
  Environment env;
  env.cfg = cfg;
  env.seeds = SeedPlan::from(cfg.seed);
  env.mapping = LabelMapping::consecutive(cfg.source_classes, cfg.target_classes, cfg.group_size);
  env.padding = {cfg.target_size, cfg.input_size, cfg.channels};
  env.padding.validate();

  const std::size_t max_tr = *std::max_element(cfg.train_sizes.begin(), cfg.train_sizes.end());
  const std::size_t need = max_tr + cfg.test_size;
  const std::size_t per_class = (need + cfg.target_classes - 1) / cfg.target_classes;
  const auto target =
      gen_target_dataset(env.seeds.target_data, {cfg.target_classes, per_class, cfg.target_size, cfg.channels});
  env.target_pool = target.slice(0, max_tr);
  env.target_test = target.slice(max_tr, cfg.test_size);

  const SourceDomainSpec src_spec{cfg.source_classes, cfg.source_per_class, cfg.input_size, cfg.channels};
  const ClassifierTrainConfig ctc{cfg.classifier_epochs, 32, cfg.classifier_lr, 0.2};
  say(progress, "training target classifier");
  env.target_model = train_source_classifier(gen_source_dataset(env.seeds.source_data, src_spec), {cfg.hidden}, ctc,
                                             env.seeds.target_model);
  say(progress, "  holdout accuracy " + fmt("%.4f", env.target_model.meta.final_accuracy));

  if (opts.surrogate) {
    say(progress, "training surrogate classifier");
    env.surrogate_model = train_source_classifier(gen_source_dataset(env.seeds.surrogate_data, src_spec),
                                                  {cfg.surrogate_hidden}, ctc, env.seeds.surrogate_model);
    say(progress, "  holdout accuracy " + fmt("%.4f", env.surrogate_model.meta.final_accuracy));
  }

  if (opts.detector) {
    // benign traffic: source-domain queries. Samples are class-interleaved, so alternate whole
    // rounds of classes between the encoder pool and the calibration pool.
    const auto benign = gen_source_dataset(
        env.seeds.benign_data, {cfg.benign_classes, cfg.benign_per_class, cfg.input_size, cfg.channels});
    std::vector<std::size_t> even, odd;
    for (std::size_t i = 0; i < benign.size(); ++i) ((i / cfg.benign_classes) % 2 ? odd : even).push_back(i);
    const auto enc_pool = benign.select(even);
    const auto calib_pool = benign.select(odd);

    auto all_pairs = make_pairs(enc_pool, env.seeds.pairs, cfg.pairs + cfg.pairs / 5, cfg.pair_balance);
    env.held_out_pairs.pairs.assign(all_pairs.pairs.begin() + static_cast<std::ptrdiff_t>(cfg.pairs),
                                    all_pairs.pairs.end());
    all_pairs.pairs.resize(cfg.pairs);
    env.encoder_pairs = std::move(all_pairs);

    EncoderTrainConfig etc;
    etc.epochs = cfg.encoder_epochs;
    etc.learning_rate = cfg.encoder_lr;
    etc.weight_decay = cfg.weight_decay;
    etc.contrastive.margin = cfg.margin;
    say(progress, "training similarity encoder");
    env.encoder = train_encoder(env.encoder_pairs, {cfg.encoder_pool, cfg.encoder_hidden, cfg.embedding}, etc, env.seeds.encoder);
    const auto summary = summarize_pair_distances(env.encoder, env.held_out_pairs);
    say(progress, "  held-out mean distance similar " + fmt("%.4f", summary.similar_mean) + " dissimilar " +
                      fmt("%.4f", summary.dissimilar_mean));

    env.calibration = calibrate_threshold(env.encoder, calib_pool, cfg.k, cfg.target_fpr, env.seeds.calibration);
    std::vector<std::size_t> order(calib_pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(env.seeds.calibration + 1);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<double>> emb;
    for (auto i : order) {
      const Tensor e = env.encoder.embed(calib_pool.samples[i]);
      emb.emplace_back(e.values().begin(), e.values().end());
    }
    env.restream_fpr = flagged_fraction(stream_knn_distances(emb, cfg.k), env.calibration.threshold);
    say(progress, "  rho " + fmt("%.6g", env.calibration.threshold) + " achieved fpr " +
                      fmt("%.5f", env.calibration.achieved_fpr) + " re-stream fpr " + fmt("%.5f", env.restream_fpr));
  }
  return env;
}

std::size_t ScenarioReport::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw ConfigError("report has no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

namespace {

double sigma_star_or_zero(std::uint64_t q, std::uint64_t d, std::size_t k) {
  return q == 0 ? 0.0 : detection_stats(q, d, k).sigma_star;
}

struct DetectedRun {
  BlackboxResult result;
  std::uint64_t detector_queries = 0;
  std::uint64_t detections = 0;
};

DetectedRun attack_with_detector(const Environment& env, std::uint64_t seed, std::size_t q,
                                 const AdversarialProgram* init, std::size_t epochs) {
  StatefulDetector det(env.encoder, env.detector_config());
  QueryChannel channel(env.target_model, &det);
  BlackboxConfig bc = env.blackbox_config(seed, q);
  bc.base.epochs = epochs;
  DetectedRun run;
  run.result = blackbox_reprogram(channel, env.train_set(env.cfg.attack_train_size()), env.mapping, env.padding, bc,
                                  init);
  run.detector_queries = det.total_queries();
  run.detections = det.total_detections();
  if (run.detector_queries != channel.total_queries())
    throw InvariantError("detector and channel disagree on the query count");
  return run;
}

}  // namespace

ScenarioReport run_table3_analog(const Environment& env, std::ostream* progress) {
  const auto& cfg = env.cfg;
  ScenarioReport rep{"table3", {"seed", "Tr", "Ts", "R_t", "BR_t", "gap", "Q"}, {}};
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const auto seed = SeedPlan::attack(cfg.seed, r);
    for (const auto tr : cfg.train_sizes) {
      const auto train = env.train_set(tr);
      const auto wb = whitebox_reprogram(env.target_model, train, env.mapping, env.padding, env.reprogram_config(seed));
      QueryChannel channel(env.target_model);
      const auto bb = blackbox_reprogram(channel, train, env.mapping, env.padding,
                                         env.blackbox_config(seed, cfg.table3_q));
      const double rt = reprogram_accuracy(wb.program, env.target_test, env.mapping, env.target_model);
      const double brt = reprogram_accuracy(bb.program, env.target_test, env.mapping, env.target_model);
      rep.rows.push_back({static_cast<double>(seed), static_cast<double>(tr), static_cast<double>(cfg.test_size), rt,
                          brt, rt - brt, static_cast<double>(bb.budget.queries)});
      say(progress, "table3 seed " + std::to_string(seed) + " Tr " + std::to_string(tr) + " R_t " + fmt("%.4f", rt) +
                        " BR_t " + fmt("%.4f", brt));
    }
  }
  return rep;
}

ScenarioReport run_table4_analog(const Environment& env, std::ostream* progress) {
  const auto& cfg = env.cfg;
  ScenarioReport rep{"table4", {"seed", "q", "BR_t", "Q", "Q_nominal", "D", "sigma_star", "k", "accounts"}, {}};
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const auto seed = SeedPlan::attack(cfg.seed, r);
    for (const auto q : cfg.q_grid) {
      const auto run = attack_with_detector(env, seed, q, nullptr, cfg.epochs);
      const double brt = reprogram_accuracy(run.result.program, env.target_test, env.mapping, env.target_model);
      const auto Q = run.result.budget.queries;
      rep.rows.push_back({static_cast<double>(seed), static_cast<double>(q), brt, static_cast<double>(Q),
                          static_cast<double>((q + 1) * cfg.test_size), static_cast<double>(run.detections),
                          sigma_star_or_zero(Q, run.detections, cfg.k), static_cast<double>(cfg.k),
                          static_cast<double>(run.result.budget.accounts_used)});
      say(progress, "table4 seed " + std::to_string(seed) + " q " + std::to_string(q) + " BR_t " + fmt("%.4f", brt) +
                        " Q " + std::to_string(Q) + " D " + std::to_string(run.detections) + " sigma* " +
                        fmt("%.4f", rep.rows.back()[6]));
    }
  }
  return rep;
}

ScenarioReport run_table5_analog(const Environment& env, std::ostream* progress) {
  const auto& cfg = env.cfg;
  if (env.surrogate_model.num_classes == 0) throw ConfigError("table5 needs a surrogate classifier");
  ScenarioReport rep{"table5",
                     {"seed", "R_s", "R_transfer", "q", "BR_t", "Q", "Q_nominal", "D", "sigma_star", "k", "BR_direct",
                      "Q_direct"},
                     {}};
  const auto train = env.train_set(cfg.attack_train_size());
  for (std::size_t r = 0; r < cfg.repeats; ++r) {
    const auto seed = SeedPlan::attack(cfg.seed, r);
    const auto sur = whitebox_reprogram(env.surrogate_model, train, env.mapping, env.padding, env.reprogram_config(seed));
    const double rs = reprogram_accuracy(sur.program, env.target_test, env.mapping, env.surrogate_model);
    const double transfer = reprogram_accuracy(sur.program, env.target_test, env.mapping, env.target_model);

    // direct attack reference at the largest q of the grid; the detector does not change its answers
    QueryChannel plain(env.target_model);
    const auto direct = blackbox_reprogram(plain, train, env.mapping, env.padding,
                                           env.blackbox_config(seed, cfg.q_grid.back()));
    const double br_direct = reprogram_accuracy(direct.program, env.target_test, env.mapping, env.target_model);

    for (const auto q : cfg.finetune_q) {
      const auto run = attack_with_detector(env, seed, q, &sur.program, cfg.finetune_epochs);
      const double brt = reprogram_accuracy(run.result.program, env.target_test, env.mapping, env.target_model);
      const auto Q = run.result.budget.queries;
      rep.rows.push_back({static_cast<double>(seed), rs, transfer, static_cast<double>(q), brt, static_cast<double>(Q),
                          static_cast<double>((q + 1) * cfg.test_size), static_cast<double>(run.detections),
                          sigma_star_or_zero(Q, run.detections, cfg.k), static_cast<double>(cfg.k), br_direct,
                          static_cast<double>(direct.budget.queries)});
      say(progress, "table5 seed " + std::to_string(seed) + " q " + std::to_string(q) + " R_s " + fmt("%.4f", rs) +
                        " BR_t " + fmt("%.4f", brt) + " Q " + std::to_string(Q) + " D " +
                        std::to_string(run.detections) + " sigma* " + fmt("%.4f", rep.rows.back()[8]) +
                        " direct " + fmt("%.4f", br_direct));
    }
  }
  return rep;
}

ScenarioReport calibration_report(const Environment& env) {
  const auto& c = env.calibration;
  return {"calibrate",
          {"k", "target_fpr", "rho", "achieved_fpr", "restream_fpr", "recorded"},
          {{static_cast<double>(c.k), c.target_fpr, c.threshold, c.achieved_fpr, env.restream_fpr,
            static_cast<double>(c.recorded)}}};
}

ScenarioReport run_scenario(const ScenarioConfig& cfg, std::ostream* progress) {
  validate(cfg);
  const bool t5 = cfg.scenario == "table5";
  const bool needs_detector = cfg.scenario != "table3";
  const auto env = build_environment(cfg, {t5, needs_detector}, progress);
  ScenarioReport rep;
  if (cfg.scenario == "table3")
    rep = run_table3_analog(env, progress);
  else if (cfg.scenario == "table4")
    rep = run_table4_analog(env, progress);
  else if (t5)
    rep = run_table5_analog(env, progress);
  else
    rep = calibration_report(env);
  validate_report(rep);
  return rep;
}

void emit_report(std::ostream& os, const ScenarioReport& report, ReportFormat format) {
  auto cell = [](double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return std::string(buf);
  };
  if (format == ReportFormat::csv) {
    for (std::size_t c = 0; c < report.columns.size(); ++c) os << (c ? "," : "") << report.columns[c];
    os << '\n';
    for (const auto& row : report.rows) {
      for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << cell(row[c]);
      os << '\n';
    }
    return;
  }
  auto short_cell = [](double v) {
    char buf[40];
    if (v == std::floor(v) && std::fabs(v) < 1e15)
      std::snprintf(buf, sizeof buf, "%.0f", v);
    else
      std::snprintf(buf, sizeof buf, "%.4f", v);
    return std::string(buf);
  };
  std::vector<std::size_t> width(report.columns.size());
  for (std::size_t c = 0; c < width.size(); ++c) width[c] = report.columns[c].size();
  for (const auto& row : report.rows)
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], short_cell(row[c]).size());
  os << report.scenario << '\n';
  for (std::size_t c = 0; c < width.size(); ++c)
    os << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << report.columns[c];
  os << '\n';
  for (const auto& row : report.rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c)
      os << (c ? "  " : "") << std::setw(static_cast<int>(width[c])) << short_cell(row[c]);
    os << '\n';
  }
}

void emit_report(const std::filesystem::path& path, const ScenarioReport& report, ReportFormat format) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  emit_report(os, report, format);
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

ScenarioReport parse_report_csv(std::istream& is, std::string scenario) {
  ScenarioReport rep;
  rep.scenario = std::move(scenario);
  std::string line;
  if (!std::getline(is, line)) throw FormatError("report CSV has no header");
  {
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, ',')) rep.columns.push_back(col);
  }
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        throw FormatError("report CSV: bad number '" + cell + "'");
      }
      if (used != cell.size()) throw FormatError("report CSV: bad number '" + cell + "'");
      row.push_back(v);
    }
    if (row.size() != rep.columns.size()) throw FormatError("report CSV: row width differs from header");
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

void validate_report(const ScenarioReport& report) {
  const auto has = [&](const char* n) {
    return std::find(report.columns.begin(), report.columns.end(), n) != report.columns.end();
  };
  if (!(has("D") && has("Q") && has("k"))) return;
  for (std::size_t r = 0; r < report.rows.size(); ++r) {
    const auto Q = static_cast<std::uint64_t>(report.at(r, "Q"));
    const auto D = static_cast<std::uint64_t>(report.at(r, "D"));
    const auto k = static_cast<std::size_t>(report.at(r, "k"));
    if (D > Q / (k + 1)) throw InvariantError("report row " + std::to_string(r) + " violates D <= floor(Q/(k+1))");
    if (has("sigma_star")) {
      const double s = report.at(r, "sigma_star");
      if (s < 0.0 || s > 1.0) throw InvariantError("report row " + std::to_string(r) + ": sigma_star outside [0, 1]");
      if (std::fabs(s - sigma_star_or_zero(Q, D, k)) > 1e-9)
        throw InvariantError("report row " + std::to_string(r) + ": sigma_star does not match (k+1)D/Q");
    }
  }
}

std::vector<std::pair<double, double>> grouped_mean(const ScenarioReport& report, const std::string& key,
                                                    const std::string& value) {
  const auto kc = report.column(key);
  const auto vc = report.column(value);
  std::map<double, std::pair<double, std::size_t>> acc;
  for (const auto& row : report.rows) {
    auto& a = acc[row[kc]];
    a.first += row[vc];
    ++a.second;
  }
  std::vector<std::pair<double, double>> out;
  for (const auto& [k, a] : acc) out.emplace_back(k, a.first / static_cast<double>(a.second));
  return out;
}

}  // namespace rpg
