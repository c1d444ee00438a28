#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "helpers.hpp"
#include "rpg/detector.hpp"
#include "rpg/errors.hpp"

using namespace rpg;

namespace {

using Emb = std::vector<double>;

std::vector<Emb> gaussian_embeddings(std::size_t n, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  std::vector<Emb> out(n, Emb(dim));
  for (auto& e : out)
    for (auto& v : e) v = g(rng);
  return out;
}

}  // namespace

TEST_CASE("identical queries: warm-up, then a flag that clears the buffer") {
  DetectorState st;
  const DetectorConfig cfg{3, 0.5, false};
  const Emb e{1.0, 2.0};
  CHECK(observe_embedding(st, cfg, e).verdict == Verdict::pass);
  CHECK(observe_embedding(st, cfg, e).verdict == Verdict::pass);
  const auto third = observe_embedding(st, cfg, e);
  CHECK(third.verdict == Verdict::pass);
  CHECK_FALSE(third.mean_knn.has_value());
  const auto fourth = observe_embedding(st, cfg, e);
  CHECK(fourth.verdict == Verdict::flagged);
  CHECK(fourth.buffer_before == 3);
  CHECK(*fourth.mean_knn == 0.0);
  CHECK(st.detections == 1);
  CHECK(st.queries == 4);
  CHECK(st.buffer.empty());
}

TEST_CASE("well separated queries never flag") {
  DetectorState st;
  const DetectorConfig cfg{3, 1.0, false};
  for (int i = 0; i < 10; ++i) CHECK(observe_embedding(st, cfg, Emb{10.0 * i}).verdict == Verdict::pass);
  CHECK(st.detections == 0);
  CHECK(st.buffer.size() == 10);
}

TEST_CASE("ten-query walk-through") {
  DetectorState st;
  const DetectorConfig cfg{2, 2.0, false};
  const std::vector<double> xs{0, 0.1, 0.2, 50, 100, 75, 50.5, 50.2, 0, 0};
  const std::vector<Verdict> expect{Verdict::pass, Verdict::pass, Verdict::flagged, Verdict::pass, Verdict::pass,
                                    Verdict::pass, Verdict::pass, Verdict::flagged, Verdict::pass, Verdict::pass};
  std::vector<std::optional<double>> knn;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto o = observe_embedding(st, cfg, Emb{xs[i]});
    CHECK(o.verdict == expect[i]);
    knn.push_back(o.mean_knn);
  }
  CHECK(*knn[2] == doctest::Approx(0.15));
  CHECK(*knn[5] == doctest::Approx(25.0));
  CHECK(*knn[6] == doctest::Approx(12.5));
  CHECK(*knn[7] == doctest::Approx(0.25));
  CHECK_FALSE(knn[9].has_value());
  CHECK(st.detections == 2);
  CHECK(st.queries == 10);
  CHECK(st.detections <= st.queries / (cfg.k + 1));
}

TEST_CASE("detections never exceed Q / (k + 1)") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t k : {1, 2, 5}) {
    DetectorState st;
    const DetectorConfig cfg{k, 0.4, false};
    bool ok = true;
    for (int step = 0; step < 100000 / 3; ++step) {
      observe_embedding(st, cfg, Emb{u(rng), u(rng)});
      ok = ok && st.detections <= st.queries / (k + 1);
      if (st.buffer.size() > 200) reset(st, ResetMode::keep_counters);
    }
    CHECK(ok);
    CHECK(st.detections > 0);
  }
}

TEST_CASE("sigma star reproduces the published detector rows") {
  struct Row {
    std::uint64_t d, q;
    double pct;
  };
  const Row rows[] = {{1810, 110400, 83.61}, {2266, 134400, 85.99}, {1794, 110400, 82.88}, {2237, 134400, 84.89},
                      {805, 43680, 93.99},   {980, 51480, 97.09},   {779, 43680, 90.95},   {973, 51480, 96.39}};
  for (const auto& r : rows) {
    const auto s = detection_stats(r.q, r.d, 50);
    CHECK(std::abs(100.0 * s.sigma_star - r.pct) <= 0.01);
    CHECK(s.sigma == doctest::Approx(static_cast<double>(r.d) / r.q));
  }
  CHECK_THROWS_AS(detection_stats(0, 0, 50), ConfigError);
  CHECK_THROWS_AS(detection_stats(10, 6, 1), InvariantError);
}

TEST_CASE("mean k-NN distance") {
  const std::vector<Emb> buf{{0.0}, {3.0}, {1.0}, {10.0}};
  CHECK(mean_knn_distance(buf, Emb{0.5}, 2) == doctest::Approx(0.5));
  CHECK(mean_knn_distance(buf, Emb{0.0}, 3) == doctest::Approx(4.0 / 3.0));
  CHECK_THROWS(mean_knn_distance(buf, Emb{0.0}, 5));
}

TEST_CASE("threshold quantile rule") {
  const std::vector<double> d{5, 1, 4, 2, 3};
  CHECK(threshold_for_fpr(d, 0.0) == 1.0);
  CHECK(flagged_fraction(d, threshold_for_fpr(d, 0.0)) == 0.0);
  CHECK(threshold_for_fpr(d, 0.4) == 3.0);
  CHECK(flagged_fraction(d, 3.0) == doctest::Approx(0.4));
  CHECK(flagged_fraction(d, threshold_for_fpr(d, 1.0)) == 1.0);
  CHECK_THROWS_AS(threshold_for_fpr({}, 0.1), ConfigError);
  CHECK_THROWS_AS(threshold_for_fpr(d, 1.5), ConfigError);
}

TEST_CASE("calibrated threshold holds its false-positive rate on a fresh order") {
  auto emb = gaussian_embeddings(5000, 8, 4);
  const std::size_t k = 10;
  const double rho = threshold_for_fpr(stream_knn_distances(emb, k), 0.001);
  CHECK(rho > 0.0);
  std::mt19937_64 rng(5);
  std::shuffle(emb.begin(), emb.end(), rng);
  DetectorState st;
  const DetectorConfig cfg{k, rho, false};
  for (const auto& e : emb) observe_embedding(st, cfg, e);
  CHECK(static_cast<double>(st.detections) / static_cast<double>(st.queries - k) <= 0.003);
}

TEST_CASE("calibration through an encoder") {
  const auto enc = make_encoder({4, 4, 1}, {0, {8}, 3}, 6);
  std::mt19937_64 rng(7);
  LabeledDataset benign;
  benign.num_classes = 1;
  for (int i = 0; i < 300; ++i) {
    benign.samples.push_back(testutil::uniform({4, 4, 1}, rng));
    benign.labels.push_back(0);
  }
  const auto r = calibrate_threshold(enc, benign, 5, 0.01, 8);
  CHECK(r.recorded == 295);
  CHECK(r.achieved_fpr <= 0.01);
  CHECK(r.threshold > 0.0);
  CHECK(calibrate_threshold(enc, benign, 5, 0.01, 8).threshold == r.threshold);
  CHECK_THROWS_AS(calibrate_threshold(enc, benign.slice(0, 5), 5, 0.01, 8), ConfigError);
}

TEST_CASE("reset modes") {
  DetectorState st;
  const DetectorConfig cfg{1, 0.5, false};
  for (int i = 0; i < 4; ++i) observe_embedding(st, cfg, Emb{0.0});
  observe_embedding(st, cfg, Emb{7.0});
  reset(st, ResetMode::keep_counters);
  CHECK(st.buffer.empty());
  CHECK(st.queries == 5);
  CHECK(st.detections == 2);
  reset(st, ResetMode::fresh_account);
  CHECK(st.queries == 0);
  CHECK(st.detections == 0);
}

TEST_CASE("stateful detector behind a query channel bans and logs") {
  const testutil::Tiny t(9);
  auto enc = make_encoder({4, 4, 1}, {0, {8}, 3}, 10);
  std::ostringstream log;
  DetectionLog dlog(log);
  StatefulDetector det(enc, {2, 1e-6, true}, &dlog);
  QueryChannel channel(t.clf, &det);
  const Tensor x(Dims{4, 4, 1}, 0.25);
  channel.predict_scores(0, x);
  channel.predict_scores(0, x);
  CHECK_THROWS_AS(channel.predict_scores(0, x), BlockedAccountError);
  CHECK(det.is_blocked(0));
  CHECK_THROWS_AS(channel.predict_scores(0, x), BlockedAccountError);
  CHECK(channel.queries(0) == 3);  // the blocked query never reached the model
  channel.predict_scores(1, x);
  CHECK(det.total_queries() == 4);
  CHECK(det.total_detections() == 1);
  CHECK(det.state(0).detections == 1);

  std::istringstream rows(log.str());
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(rows, line)) lines.push_back(line);
  REQUIRE(lines.size() == 5);
  CHECK(lines[0] == "account,query_index,buffer_size_before,mean_knn_distance,verdict");
  CHECK(lines[1] == "0,0,0,warmup,pass");
  CHECK(lines[3] == "0,2,2,0,flagged");
  CHECK(lines[4] == "1,0,0,warmup,pass");
}

TEST_CASE("detector config validation") {
  CHECK_THROWS_AS((DetectorConfig{0, 1.0, false}).validate(), ConfigError);
  CHECK_THROWS_AS((DetectorConfig{3, -1.0, false}).validate(), ConfigError);
  CHECK_THROWS_AS((DetectorConfig{3, std::nan(""), false}).validate(), ConfigError);
  CHECK_NOTHROW((DetectorConfig{3, 0.0, false}).validate());
}
