#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "rpg/errors.hpp"
#include "rpg/gradcheck.hpp"
#include "rpg/harness.hpp"
#include "rpg/reprogram.hpp"

using namespace rpg;

namespace {

Tensor analytic_weight_gradient(const AdversarialProgram& prog, const testutil::Tiny& t, const FocalLossSpec& focal) {
  const Tensor delta = prog.delta();
  Tensor g(prog.weights().dims());
  for (std::size_t i = 0; i < t.ds.size(); ++i)
    axpy(1.0 / static_cast<double>(t.ds.size()),
         prog.chain_to_weights(input_gradient(t.clf, prog.apply(t.ds.samples[i], delta), t.mapping, t.ds.labels[i], focal)),
         g);
  return g;
}

}  // namespace

TEST_CASE("delta vanishes at W = 0 and saturates on the frame only") {
  const PaddingSpec spec{16, 32, 3};
  AdversarialProgram zero(spec, Tensor(Dims{32, 32, 3}));
  CHECK(max_abs(zero.delta()) == 0.0);

  AdversarialProgram big(spec, Tensor(Dims{32, 32, 3}, 50.0));
  const Tensor d = big.delta();
  const Tensor& m = big.mask();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (m[i] == 0.0)
      CHECK(d[i] == 0.0);
    else
      CHECK(d[i] == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("programmed input keeps the target sample and stays in [-1, 1]") {
  const PaddingSpec spec{16, 32, 3};
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    AdversarialProgram prog(spec, testutil::uniform({32, 32, 3}, rng, -20.0, 20.0));
    const Tensor x = testutil::uniform({16, 16, 3}, rng);
    const Tensor out = prog.apply(x);
    CHECK(max_abs(out) <= 1.0);
    const std::size_t off = spec.offset();
    bool centre_ok = true;
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c)
        for (std::size_t ch = 0; ch < 3; ++ch)
          centre_ok = centre_ok && out.at(r + off, c + off, ch) == x.at(r, c, ch);
    CHECK(centre_ok);
  }
  AdversarialProgram zero(spec, Tensor(Dims{32, 32, 3}));
  const Tensor x = testutil::uniform({16, 16, 3}, rng);
  CHECK(zero.apply(x) == pad_and_mask(x, spec).padded);
}

TEST_CASE("label mapping score") {
  const auto mapping = LabelMapping::consecutive(12, 2, 6);
  Tensor uniform_scores(Dims{12}, 1.0 / 12.0);
  CHECK(mlm_score(uniform_scores, mapping, 0) == doctest::Approx(1.0 / 12.0).epsilon(1e-15));

  Tensor one_hot(Dims{12});
  one_hot[3] = 1.0;
  CHECK(mlm_score(one_hot, mapping, 0) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  CHECK(mlm_score(one_hot, mapping, 1) == 0.0);

  Tensor s(Dims{12});
  for (std::size_t i = 0; i < 12; ++i) s[i] = static_cast<double>(i + 1) / 78.0;
  CHECK(mlm_score(s, mapping, 0) == doctest::Approx(21.0 / (6.0 * 78.0)).epsilon(1e-14));
  CHECK(mlm_score(s, mapping, 1) == doctest::Approx(57.0 / (6.0 * 78.0)).epsilon(1e-14));

  CHECK_THROWS_AS(mlm_score(s, mapping, 2), ConfigError);
  CHECK_THROWS_AS(LabelMapping::consecutive(12, 3, 6).validate(12), ConfigError);
}

TEST_CASE("focal loss values") {
  CHECK(focal_loss(0.5, {2.0}) == doctest::Approx(0.17328679513998632).epsilon(1e-15));
  CHECK(focal_loss(1.0, {2.0}) == 0.0);
  CHECK(focal_loss(0.3, {0.0}) == doctest::Approx(-std::log(0.3)).epsilon(1e-15));
  CHECK(std::isfinite(focal_loss(0.0, {2.0})));
  CHECK_THROWS_AS(focal_loss(1.5, {2.0}), ConfigError);

  for (double p : {0.05, 0.3, 0.5, 0.8, 0.97}) {
    const double h = 1e-6;
    const double numeric = (focal_loss(p + h, {2.0}) - focal_loss(p - h, {2.0})) / (2 * h);
    CHECK(focal_loss_derivative(p, {2.0}) == doctest::Approx(numeric).epsilon(1e-6));
  }
}

TEST_CASE("batch loss is the mean of per-sample losses") {
  const testutil::Tiny t(3);
  const auto prog = AdversarialProgram::random(t.padding, 9, 0.5);
  const Tensor delta = prog.delta();
  double total = 0.0;
  for (std::size_t i = 0; i < t.ds.size(); ++i)
    total += sample_loss(t.clf.scores(prog.apply(t.ds.samples[i], delta)), t.mapping, t.ds.labels[i], {2.0});
  CHECK(reprogram_loss(prog, t.ds, t.mapping, t.clf) == doctest::Approx(total / 3.0).epsilon(1e-14));

  // a perfect scorer gives zero loss
  const ScoreFn perfect = [](const Tensor&) {
    Tensor s(Dims{4});
    s[0] = s[1] = 1.0;  // group mean 1
    return s;
  };
  LabeledDataset zeros = t.ds;
  for (auto& y : zeros.labels) y = 0;
  CHECK(reprogram_loss(prog, zeros, t.mapping, perfect) == 0.0);
  CHECK_THROWS_AS(reprogram_loss(prog, t.ds.slice(0, 0), t.mapping, t.clf), ConfigError);
}

TEST_CASE("loss gradient with respect to W matches central differences") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const testutil::Tiny t(seed);
    const auto prog = AdversarialProgram::random(t.padding, seed + 10, 0.8);
    for (double gamma : {0.0, 2.0}) {
      const FocalLossSpec focal{gamma};
      const ScalarFn f = [&](const Tensor& w) {
        AdversarialProgram p = prog;
        p.weights() = w;
        return reprogram_loss(p, t.ds, t.mapping, t.clf, focal);
      };
      const GradientFn grad = [&](const Tensor& w) {
        AdversarialProgram p = prog;
        p.weights() = w;
        return analytic_weight_gradient(p, t, focal);
      };
      const auto r = check_gradient(f, grad, prog.weights(), 1e-5, 1e-4);
      CHECK(r.max_relative_error < 1e-4);
    }
  }
}

TEST_CASE("white-box edge cases") {
  const testutil::Tiny t(5);
  const auto init = AdversarialProgram::random(t.padding, 7);
  ReprogramConfig cfg;
  cfg.epochs = 0;
  cfg.batch = 1;
  const auto r0 = whitebox_reprogram(t.clf, t.ds, t.mapping, t.padding, cfg, &init);
  CHECK(r0.program == init);
  CHECK(r0.best_loss == r0.initial_loss);
  CHECK(r0.epoch_losses.empty());

  cfg.epochs = 8;
  cfg.eta = 0.5;
  const auto r = whitebox_reprogram(t.clf, t.ds, t.mapping, t.padding, cfg, &init);
  double running = r.initial_loss;
  for (double l : r.epoch_losses) running = std::min(running, l);
  CHECK(r.best_loss == running);
  CHECK(reprogram_loss(r.program, t.ds, t.mapping, t.clf) == doctest::Approx(r.best_loss).epsilon(1e-14));

  cfg.batch = 4;
  CHECK_THROWS_AS(whitebox_reprogram(t.clf, t.ds, t.mapping, t.padding, cfg, &init), ConfigError);
}

TEST_CASE("accuracy: single target class and naive recount") {
  const testutil::Tiny t(6);
  const auto prog = AdversarialProgram::random(t.padding, 8, 0.5);
  LabelMapping one{{{0, 1, 2, 3}}};
  LabeledDataset ds = t.ds;
  for (auto& y : ds.labels) y = 0;
  ds.num_classes = 1;
  CHECK(reprogram_accuracy(prog, ds, one, t.clf) == 1.0);

  std::mt19937_64 rng(12);
  LabeledDataset many;
  many.num_classes = 2;
  many.domain = Domain::target;
  for (int i = 0; i < 50; ++i) {
    many.samples.push_back(testutil::uniform({2, 2, 1}, rng));
    many.labels.push_back(static_cast<std::uint32_t>(rng() % 2));
  }
  std::size_t hits = 0;
  for (std::size_t i = 0; i < many.size(); ++i) {
    const Tensor s = t.clf.scores(prog.apply(many.samples[i]));
    const double p0 = (s[0] + s[1]) / 2, p1 = (s[2] + s[3]) / 2;
    hits += static_cast<std::size_t>((p1 > p0 ? 1u : 0u) == many.labels[i]);
  }
  CHECK(reprogram_accuracy(prog, many, t.mapping, t.clf) == doctest::Approx(hits / 50.0).epsilon(1e-15));
}

TEST_CASE("mapping CSV and program file round trip") {
  const auto mapping = LabelMapping::consecutive(12, 2, 6);
  std::stringstream ss;
  write_mapping_csv(ss, mapping);
  CHECK(read_mapping_csv(ss).groups == mapping.groups);
  std::istringstream bad("target,source\n0,1\n");
  CHECK_THROWS_AS(read_mapping_csv(bad), FormatError);

  const auto prog = AdversarialProgram::random({16, 32, 3}, 3, 0.3);
  const auto path = std::filesystem::temp_directory_path() / "rpg_test_program.bin";
  save_program(path, prog);
  CHECK(load_program(path) == prog);
  std::filesystem::remove(path);
}

TEST_CASE("desk white-box reprogramming beats 0.7 on held-out target data") {
  ScenarioConfig cfg;
  cfg.seed = 0;
  const auto env = build_environment(cfg, {});
  const auto r = whitebox_reprogram(env.target_model, env.train_set(400), env.mapping, env.padding,
                                    env.reprogram_config(SeedPlan::attack(0, 0)));
  CHECK(r.best_loss < r.initial_loss);
  CHECK(reprogram_accuracy(r.program, env.target_test, env.mapping, env.target_model) >= 0.7);
}
