// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Scenario CSVs go to --out-dir.
#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "rpg/detector.hpp"
#include "rpg/encoder.hpp"
#include "rpg/errors.hpp"
#include "rpg/gradcheck.hpp"
#include "rpg/harness.hpp"
#include "rpg/zoattack.hpp"

using namespace rpg;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

int failures = 0;
std::map<int, std::string> lines;  // criterion number -> result line

void report(const char* id, const Outcome& o, double secs) {
  const std::string line = std::string(id) + ' ' + (o.pass ? "PASS" : "FAIL") + "  " + o.detail + "  [" +
                           fmt("%.1f", secs) + "s]";
  std::cerr << line << std::endl;
  lines[std::stoi(id + 2)] = line;
  if (!o.pass) ++failures;
}

template <class Fn>
void run(const char* id, Fn&& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  report(id, o, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string csv(const ScenarioReport& r) {
  std::ostringstream os;
  emit_report(os, r, ReportFormat::csv);
  return os.str();
}

bool bound_holds(const ScenarioReport& r) {
  try {
    validate_report(r);
    return true;
  } catch (const InvariantError&) {
    return false;
  }
}

double mean_at(const std::vector<std::pair<double, double>>& g, double key) {
  for (const auto& [k, v] : g)
    if (k == key) return v;
  throw ConfigError("no group " + fmt("%g", key));
}

Tensor uniform(const Dims& dims, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(dims);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

Outcome ac1() {
  struct Row {
    std::uint64_t d, q;
    double pct;
  };
  const Row rows[] = {{1810, 110400, 83.61}, {2266, 134400, 85.99}, {1794, 110400, 82.88}, {2237, 134400, 84.89},
                      {805, 43680, 93.99},   {980, 51480, 97.09},   {779, 43680, 90.95},   {973, 51480, 96.39}};
  double worst = 0.0;
  for (const auto& r : rows) worst = std::max(worst, std::abs(100.0 * detection_stats(r.q, r.d, 50).sigma_star - r.pct));
  return {worst <= 0.01, "8 rows, worst deviation " + fmt("%.4f", worst) + " pp"};
}

Outcome ac2_fuzz() {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  DetectorState st;
  const DetectorConfig cfg{3, 0.3, false};
  bool ok = true;
  for (int step = 0; step < 100000; ++step) {
    observe_embedding(st, cfg, std::vector<double>{u(rng), u(rng)});
    const auto s = stats(st, cfg.k);
    ok = ok && st.detections <= st.queries / (cfg.k + 1) && s.sigma_star >= 0.0 && s.sigma_star <= 1.0;
    if (st.buffer.size() > 256) reset(st, ResetMode::keep_counters);
  }
  return {ok, "fuzz 1e5 steps, D " + std::to_string(st.detections) + " Q " + std::to_string(st.queries)};
}

Outcome ac3() {
  DetectorState four;
  const DetectorConfig k3{3, 0.5, false};
  for (int i = 0; i < 4; ++i) observe_embedding(four, k3, std::vector<double>{1.0, 2.0});
  const bool four_ok = four.detections == 1 && four.buffer.empty();

  DetectorState ten;
  const DetectorConfig k2{2, 2.0, false};
  std::string verdicts;
  for (double x : {0.0, 0.1, 0.2, 50.0, 100.0, 75.0, 50.5, 50.2, 0.0, 0.0})
    verdicts += observe_embedding(ten, k2, std::vector<double>{x}).verdict == Verdict::flagged ? 'F' : '.';
  const bool ten_ok = verdicts == "..F....F.." && ten.detections <= 2;
  return {four_ok && ten_ok, "four identical: D=" + std::to_string(four.detections) + "; ten-query: " + verdicts};
}

Outcome ac4() {
  std::mt19937_64 rng(4);
  double worst_layers = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    FeedforwardNet net(Dims{4, 4, 3});
    net.add(Layer::avg_pool(Dims{4, 4, 3}));
    net.add(Layer::affine(Dims{2, 2, 3}, 6));
    net.add(Layer::tanh(Dims{6}));
    net.add(Layer::affine(Dims{6}, 5));
    net.add(Layer::relu(Dims{5}));
    net.add(Layer::affine(Dims{5}, 4));
    net.add(Layer::softmax(4));
    randomize_parameters(net, rng, 0.8);
    worst_layers = std::max(worst_layers, finite_diff_check(net, uniform({4, 4, 3}, rng), 1e-4, 1e-4, 50 + trial).max_relative_error);
  }

  // end-to-end: mean focal loss over a small target set as a function of W
  const PaddingSpec padding{2, 4, 1};
  const auto mapping = LabelMapping::consecutive(4, 2, 2);
  Classifier clf;
  clf.net = make_mlp({Dims{4, 4, 1}, {5}, 4, true}, 5);
  clf.num_classes = 4;
  LabeledDataset ds;
  ds.num_classes = 2;
  ds.domain = Domain::target;
  for (int i = 0; i < 3; ++i) {
    ds.samples.push_back(uniform({2, 2, 1}, rng));
    ds.labels.push_back(i % 2);
  }
  const auto prog = AdversarialProgram::random(padding, 6, 0.8);
  const ScalarFn f = [&](const Tensor& w) {
    AdversarialProgram p = prog;
    p.weights() = w;
    return reprogram_loss(p, ds, mapping, clf);
  };
  const GradientFn grad = [&](const Tensor& w) {
    AdversarialProgram p = prog;
    p.weights() = w;
    const Tensor delta = p.delta();
    Tensor g(w.dims());
    for (std::size_t i = 0; i < ds.size(); ++i)
      axpy(1.0 / 3.0, p.chain_to_weights(input_gradient(clf, p.apply(ds.samples[i], delta), mapping, ds.labels[i], {})), g);
    return g;
  };
  const double worst_e2e = check_gradient(f, grad, prog.weights(), 1e-5, 1e-4).max_relative_error;
  return {worst_layers < 1e-4 && worst_e2e < 1e-4,
          "layers " + fmt("%.2e", worst_layers) + ", loss wrt W " + fmt("%.2e", worst_e2e)};
}

Outcome ac5_linear() {
  const Tensor a(Dims{6}, std::vector<double>{0.5, -1.0, 2.0, 0.0, 0.25, -0.75});
  std::mt19937_64 rng(5);
  Tensor mean(Dims{6});
  for (int i = 0; i < 10000; ++i)
    axpy(1e-4, zo_gradient([&](const Tensor& x) { return dot(a, x); }, Tensor(Dims{6}, 0.1), {5, 0.01, 6.0}, rng), mean);
  double worst = 0.0;
  for (std::size_t i = 0; i < 6; ++i) worst = std::max(worst, std::abs(mean[i] - a[i]) / max_abs(a));
  return {worst <= 0.05, "linear loss worst coordinate error " + fmt("%.3f", worst) + " of max|g|"};
}

Outcome ac9_cases(const Environment& env) {
  const ContrastiveSpec z{env.cfg.margin};
  const double c1 = contrastive_terms(0.0, 0, z).total();
  const double c2 = contrastive_terms(z.margin + 0.5, 1, z).total();
  const double c3 = contrastive_terms(0.0, 1, z).total();
  const bool exact = std::abs(c1) <= 1e-12 && std::abs(c2) <= 1e-12 && std::abs(c3 - z.margin * z.margin / 2) <= 1e-12;
  const auto s = summarize_pair_distances(env.encoder, env.held_out_pairs);
  return {exact && s.similar_mean < s.dissimilar_mean,
          "cases exact: " + std::string(exact ? "yes" : "no") + "; held-out similar " + fmt("%.4f", s.similar_mean) +
              " < dissimilar " + fmt("%.4f", s.dissimilar_mean)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "acceptance_out";
  std::size_t repeats = 5;
  app.add_option("--seed", seed, "base seed");
  app.add_option("--out-dir", out_dir, "where scenario CSVs are written");
  app.add_option("--repeats", repeats, "attack seeds for the trend criteria");
  CLI11_PARSE(app, argc, argv);
  std::filesystem::create_directories(out_dir);

  run("AC1", ac1);
  run("AC3", ac3);
  run("AC4", ac4);

  ScenarioConfig cfg;
  cfg.seed = seed;
  std::cerr << "building environment (seed " << seed << ")" << std::endl;
  const auto t0 = std::chrono::steady_clock::now();
  const Environment env = build_environment(cfg, {true, true}, &std::cerr);
  std::cerr << "environment ready in " << fmt("%.1f", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
            << "s" << std::endl;

  Environment multi = env;
  multi.cfg.repeats = repeats;

  ScenarioReport t3, t4, t5;
  run("AC6", [&]() -> Outcome {
    t3 = run_table3_analog(multi, &std::cerr);
    emit_report(out_dir / "table3.csv", t3, ReportFormat::csv);
    const auto g = grouped_mean(t3, "Tr", "gap");
    const double small = mean_at(g, static_cast<double>(cfg.train_sizes.front()));
    const double large = mean_at(g, static_cast<double>(cfg.train_sizes.back()));
    return {small >= 0.0 && large >= 0.0 && large < small,
            std::to_string(repeats) + " seeds, mean gap Tr=" + std::to_string(cfg.train_sizes.front()) + " " +
                fmt("%.4f", small) + ", Tr=" + std::to_string(cfg.train_sizes.back()) + " " + fmt("%.4f", large)};
  });

  run("AC7", [&]() -> Outcome {
    t4 = run_table4_analog(env, &std::cerr);
    emit_report(out_dir / "table4.csv", t4, ReportFormat::csv);
    emit_report(out_dir / "calibration.csv", calibration_report(env), ReportFormat::csv);
    bool ok = env.calibration.achieved_fpr <= 0.003 && env.restream_fpr <= 0.003;
    std::string detail = "rho " + fmt("%.4g", env.calibration.threshold) + ", re-stream FPR " +
                         fmt("%.5f", env.restream_fpr) + "; sigma*";
    for (std::size_t r = 0; r < t4.rows.size(); ++r) {
      ok = ok && t4.at(r, "sigma_star") >= 0.8;
      detail += " q=" + fmt("%g", t4.at(r, "q")) + ":" + fmt("%.4f", t4.at(r, "sigma_star"));
    }
    return {ok, detail};
  });

  run("AC5", [&]() -> Outcome {
    auto lin = ac5_linear();
    // large-q black-box accuracy against white-box on the same train set and attack seed
    std::size_t row = 0;
    for (std::size_t r = 0; r < t4.rows.size(); ++r)
      if (t4.at(r, "q") > t4.at(row, "q")) row = r;
    const auto attack_seed = static_cast<std::uint64_t>(t4.at(row, "seed"));
    const auto wb = whitebox_reprogram(env.target_model, env.train_set(cfg.attack_train_size()), env.mapping,
                                       env.padding, env.reprogram_config(attack_seed));
    const double rt = reprogram_accuracy(wb.program, env.target_test, env.mapping, env.target_model);
    const double gap = std::abs(rt - t4.at(row, "BR_t"));
    return {lin.pass && gap <= 0.03, lin.detail + "; q=" + fmt("%g", t4.at(row, "q")) + " BR_t " +
                                         fmt("%.4f", t4.at(row, "BR_t")) + " vs R_t " + fmt("%.4f", rt)};
  });

  run("AC8", [&]() -> Outcome {
    t5 = run_table5_analog(multi, &std::cerr);
    emit_report(out_dir / "table5.csv", t5, ReportFormat::csv);
    const auto br = grouped_mean(t5, "q", "BR_t");
    const auto q_used = grouped_mean(t5, "q", "Q");
    const auto sig = grouped_mean(t5, "q", "sigma_star");
    const auto direct = grouped_mean(t5, "q", "BR_direct");
    const auto q_direct = grouped_mean(t5, "q", "Q_direct");
    const double top = static_cast<double>(cfg.finetune_q.back());
    const double acc_gap = mean_at(direct, top) - mean_at(br, top);
    const double q_ratio = mean_at(q_used, top) / mean_at(q_direct, top);
    bool positive = true;
    for (std::size_t r = 0; r < t5.rows.size(); ++r) positive = positive && t5.at(r, "sigma_star") > 0.0;
    const double lo = static_cast<double>(cfg.finetune_q.front());
    const double s_lo = mean_at(sig, lo), s_hi = mean_at(sig, top);
    return {acc_gap <= 0.05 && q_ratio < 0.25 && s_lo <= s_hi && positive,
            std::to_string(repeats) + " seeds, q=" + fmt("%g", top) + ": accuracy " + fmt("%.4f", mean_at(br, top)) +
                " vs direct " + fmt("%.4f", mean_at(direct, top)) + " using " + fmt("%.1f", 100 * q_ratio) +
                "% of its queries; sigma* q=" + fmt("%g", lo) + " " + fmt("%.4f", s_lo) + " <= q=" + fmt("%g", top) +
                " " + fmt("%.4f", s_hi)};
  });

  run("AC2", [&]() -> Outcome {
    auto fuzz = ac2_fuzz();
    const bool scen = bound_holds(t3) && bound_holds(t4) && bound_holds(t5);
    return {fuzz.pass && scen, fuzz.detail + "; scenario rows " + (scen ? "within bound" : "VIOLATE the bound")};
  });

  run("AC9", [&] { return ac9_cases(env); });

  run("AC10", [&]() -> Outcome {
    // rebuild everything from the same config and seed and repeat a slice of each scenario
    Environment again = build_environment(cfg, {true, true});
    again.cfg.repeats = 1;
    Environment again4 = again, again5 = again;
    again4.cfg.q_grid = {cfg.q_grid.front()};
    again5.cfg.finetune_q = {cfg.finetune_q.front()};
    auto first_rows = [](const ScenarioReport& r, std::size_t n) {
      ScenarioReport out = r;
      out.rows.resize(std::min(n, r.rows.size()));
      return out;
    };
    const bool cal = csv(calibration_report(again)) == csv(calibration_report(env));
    const bool a3 = csv(run_table3_analog(again)) == csv(first_rows(t3, cfg.train_sizes.size()));
    const bool a4 = csv(run_table4_analog(again4)) == csv(first_rows(t4, 1));
    const bool a5 = csv(run_table5_analog(again5)) == csv(first_rows(t5, 1));
    return {cal && a3 && a4 && a5, std::string("bit-identical CSVs: calibration ") + (cal ? "yes" : "no") +
                                       ", table3 " + (a3 ? "yes" : "no") + ", table4 " + (a4 ? "yes" : "no") +
                                       ", table5 " + (a5 ? "yes" : "no")};
  });

  const std::string verdict = failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED";
  std::ofstream summary(out_dir / "summary.txt");
  for (const auto& [n, line] : lines) {
    std::cout << line << '\n';
    summary << line << '\n';
  }
  std::cout << verdict << std::endl;
  summary << verdict << '\n';
  return failures == 0 ? 0 : 1;
}
