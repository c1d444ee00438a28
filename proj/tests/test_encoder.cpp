#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "rpg/encoder.hpp"
#include "rpg/errors.hpp"

using namespace rpg;

namespace {

PairDataset random_pairs(std::mt19937_64& rng, std::size_t n, const Dims& dims, std::uint32_t only_label = 2) {
  PairDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t label = only_label < 2 ? only_label : static_cast<std::uint32_t>(i % 2);
    ds.pairs.push_back({testutil::uniform(dims, rng), testutil::uniform(dims, rng), label});
  }
  return ds;
}

}  // namespace

TEST_CASE("embedding shape, identity and symmetry") {
  const auto enc = make_encoder({8, 8, 3}, {1, {16}, 5}, 3);
  std::mt19937_64 rng(1);
  const Tensor a = testutil::uniform({8, 8, 3}, rng);
  const Tensor b = testutil::uniform({8, 8, 3}, rng);
  const Tensor c = testutil::uniform({8, 8, 3}, rng);
  CHECK(enc.embedding_dim() == 5);
  CHECK(enc.embed(a).size() == 5);
  CHECK(pair_distance(enc, a, a) == 0.0);
  CHECK(pair_distance(enc, a, b) > 0.0);
  CHECK(pair_distance(enc, a, b) == pair_distance(enc, b, a));
  CHECK(pair_distance(enc, a, c) <= pair_distance(enc, a, b) + pair_distance(enc, b, c) + 1e-12);
  CHECK_THROWS_AS(make_encoder({7, 7, 3}, {1, {16}, 5}, 3), ShapeError);
}

TEST_CASE("contrastive terms") {
  const ContrastiveSpec z1{1.0};
  CHECK(contrastive_terms(0.0, 0, z1).total() == 0.0);
  CHECK(contrastive_terms(1.5, 1, z1).total() == 0.0);
  CHECK(contrastive_terms(0.0, 1, z1).dissimilar == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(contrastive_terms(0.3, 0, z1).similar == doctest::Approx(0.045).epsilon(1e-12));
  CHECK(contrastive_terms(0.3, 0, z1).dissimilar == 0.0);
  CHECK(contrastive_terms(0.25, 1, {2.0}).dissimilar == doctest::Approx(0.5 * 1.75 * 1.75).epsilon(1e-12));

  const auto enc = make_encoder({2, 2, 1}, {0, {4}, 3}, 9);
  std::mt19937_64 rng(2);
  const auto pairs = random_pairs(rng, 6, {2, 2, 1});
  double total = 0.0;
  for (const auto& p : pairs.pairs) total += contrastive_loss(enc, p, z1);
  CHECK(contrastive_loss(enc, pairs, z1) == doctest::Approx(total).epsilon(1e-14));
  SamplePair bad = pairs.pairs[0];
  bad.label = 2;
  CHECK_THROWS_AS(contrastive_loss(enc, bad, z1), ConfigError);
}

TEST_CASE("objective gradient matches central differences") {
  for (std::uint64_t seed : {4, 5}) {
    auto enc = make_encoder({2, 2, 1}, {0, {6}, 3}, seed);
    std::mt19937_64 rng(seed);
    const auto pairs = random_pairs(rng, 2, {2, 2, 1});
    const ContrastiveSpec spec{3.0};  // keeps the dissimilar hinge active
    const double wd = 1e-2;
    std::vector<Tensor> grads;
    contrastive_objective(enc.net, pairs.pairs, spec, wd, &grads);

    double worst = 0.0;
    auto params = enc.net.parameters();
    REQUIRE(grads.size() == params.size());
    const double h = 1e-5;
    for (std::size_t p = 0; p < params.size(); ++p)
      for (std::size_t i = 0; i < params[p]->size(); ++i) {
        const double keep = (*params[p])[i];
        (*params[p])[i] = keep + h;
        const double up = contrastive_objective(enc.net, pairs.pairs, spec, wd, nullptr);
        (*params[p])[i] = keep - h;
        const double down = contrastive_objective(enc.net, pairs.pairs, spec, wd, nullptr);
        (*params[p])[i] = keep;
        const double numeric = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(grads[p][i] - numeric) / std::max(1.0, std::abs(numeric)));
      }
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("training on similar pairs pulls them together, deterministically") {
  std::mt19937_64 rng(6);
  const auto pairs = random_pairs(rng, 64, {4, 4, 1}, 0);
  const EncoderArch arch{0, {16}, 4};
  EncoderTrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch = 16;
  cfg.learning_rate = 1e-3;
  const auto before = summarize_pair_distances(make_encoder({4, 4, 1}, arch, 7), pairs);
  const auto a = train_encoder(pairs, arch, cfg, 7);
  const auto b = train_encoder(pairs, arch, cfg, 7);
  CHECK(summarize_pair_distances(a, pairs).similar_mean < before.similar_mean);
  CHECK(a.net == b.net);
  REQUIRE(a.log.size() == 5);
  CHECK(a.log.back().loss < a.log.front().loss);
}

TEST_CASE("pair accuracy of a collapsed encoder") {
  auto enc = make_encoder({2, 2, 1}, {0, {4}, 3}, 8);
  for (auto* p : enc.net.parameters())
    for (auto& v : p->values()) v = 0.0;
  std::mt19937_64 rng(9);
  const ContrastiveSpec spec{1.0};
  CHECK(encoder_pair_accuracy(enc, random_pairs(rng, 10, {2, 2, 1}, 0), spec) == 1.0);
  CHECK(encoder_pair_accuracy(enc, random_pairs(rng, 10, {2, 2, 1}, 1), spec) == 0.0);
  CHECK(encoder_pair_accuracy(enc, random_pairs(rng, 10, {2, 2, 1}), spec) == 0.5);
  CHECK_THROWS_AS(encoder_pair_accuracy(enc, PairDataset{}, spec), ConfigError);
}

TEST_CASE("encoder file round trip") {
  const auto enc = make_encoder({8, 8, 3}, {1, {16}, 5}, 10, {2.5});
  const auto path = std::filesystem::temp_directory_path() / "rpg_test_encoder.bin";
  save_encoder(path, enc);
  const auto back = load_encoder(path);
  CHECK(back.net == enc.net);
  CHECK(back.contrastive.margin == 2.5);
  std::filesystem::remove(path);

  std::ostringstream os;
  write_encoder_log_csv(os, {{0, 1.5, 0.2, 0.9}});
  CHECK(os.str().rfind("epoch,", 0) == 0);
}
