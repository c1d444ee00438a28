#include "rpg/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "rpg/errors.hpp"
#include "rpg/io.hpp"
#include "rpg/optim.hpp"

namespace rpg {

SimilarityEncoder make_encoder(const Dims& input_dims, const EncoderArch& arch, std::uint64_t seed,
                               ContrastiveSpec contrastive) {
  if (arch.embedding == 0) throw ConfigError("embedding dimension must be positive");
  if (!(contrastive.margin > 0.0) || !std::isfinite(contrastive.margin))
    throw ConfigError("contrastive margin must be finite and positive");
  SimilarityEncoder enc;
  enc.net = FeedforwardNet(input_dims);
  Dims current = input_dims;
  for (std::size_t i = 0; i < arch.pool; ++i) {
    enc.net.add(Layer::avg_pool(current));
    current = enc.net.output_dims();
  }
  const FeedforwardNet head = make_mlp({current, arch.hidden, arch.embedding, false}, seed);
  for (const auto& l : head.layers()) enc.net.add(l);
  enc.contrastive = contrastive;
  enc.seed = seed;
  return enc;
}

double pair_distance(const SimilarityEncoder& enc, const Tensor& x1, const Tensor& x2) {
  require_same_dims(x1, x2, "pair_distance");
  return l2_distance(enc.embed(x1).values(), enc.embed(x2).values());
}

ContrastiveTerms contrastive_terms(double distance, std::uint32_t label, const ContrastiveSpec& spec) {
  ContrastiveTerms t;
  if (label == 0) {
    t.similar = 0.5 * distance * distance;
  } else {
    const double hinge = std::max(0.0, spec.margin - distance);
    t.dissimilar = 0.5 * hinge * hinge;
  }
  return t;
}

double contrastive_loss(const SimilarityEncoder& enc, const SamplePair& pair, const ContrastiveSpec& spec) {
  if (pair.label > 1) throw ConfigError("pair label must be 0 or 1");
  return contrastive_terms(pair_distance(enc, pair.first, pair.second), pair.label, spec).total();
}

double contrastive_loss(const SimilarityEncoder& enc, const PairDataset& pairs, const ContrastiveSpec& spec) {
  double s = 0.0;
  for (const auto& p : pairs.pairs) s += contrastive_loss(enc, p, spec);
  return s;
}

double contrastive_objective(const FeedforwardNet& net, const std::vector<SamplePair>& pairs,
                             const ContrastiveSpec& spec, double weight_decay, std::vector<Tensor>* grads) {
  if (pairs.empty()) throw ConfigError("contrastive objective over no pairs");
  const double inv = 1.0 / static_cast<double>(pairs.size());
  if (grads) {
    grads->clear();
    for (const auto* p : net.parameters()) grads->emplace_back(p->dims());
  }
  double loss = 0.0;
  for (const auto& pair : pairs) {
    const ForwardTrace t1 = net.forward_trace(pair.first);
    const ForwardTrace t2 = net.forward_trace(pair.second);
    const Tensor diff = t1.output() - t2.output();
    const double dist = l2_norm(diff);
    loss += contrastive_terms(dist, pair.label, spec).total() * inv;
    if (!grads) continue;
    // d loss / d e1 = coeff * (e1 - e2); d loss / d e2 = -coeff * (e1 - e2)
    double coeff = 0.0;
    if (pair.label == 0)
      coeff = 1.0;
    else if (dist < spec.margin && dist > 0.0)
      coeff = -(spec.margin - dist) / dist;
    if (coeff == 0.0) continue;
    const NetGradients g1 = net.gradients(t1, (coeff * inv) * diff);
    const NetGradients g2 = net.gradients(t2, (-coeff * inv) * diff);
    for (std::size_t i = 0; i < grads->size(); ++i) {
      axpy(1.0, g1.params[i], (*grads)[i]);
      axpy(1.0, g2.params[i], (*grads)[i]);
    }
  }
  if (weight_decay != 0.0) {
    const auto params = net.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      loss += 0.5 * weight_decay * dot(*params[i], *params[i]);
      if (grads) axpy(weight_decay, *params[i], (*grads)[i]);
    }
  }
  return loss;
}

PairDistanceSummary summarize_pair_distances(const SimilarityEncoder& enc, const PairDataset& pairs) {
  double s[2] = {0.0, 0.0};
  std::size_t n[2] = {0, 0};
  for (const auto& p : pairs.pairs) {
    s[p.label] += pair_distance(enc, p.first, p.second);
    ++n[p.label];
  }
  return {n[0] ? s[0] / static_cast<double>(n[0]) : 0.0, n[1] ? s[1] / static_cast<double>(n[1]) : 0.0};
}

SimilarityEncoder train_encoder(const PairDataset& pairs, const EncoderArch& arch, const EncoderTrainConfig& cfg,
                                std::uint64_t seed) {
  if (pairs.pairs.empty()) throw ConfigError("cannot train an encoder without pairs");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  std::mt19937_64 rng(seed);
  SimilarityEncoder enc = make_encoder(pairs.pairs.front().first.dims(), arch, rng(), cfg.contrastive);
  enc.seed = seed;

  RmsProp opt({cfg.learning_rate, 0.9, 1e-8});
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<SamplePair> batch;
  std::vector<Tensor> grads;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + cfg.batch); ++i)
        batch.push_back(pairs.pairs[order[i]]);
      loss_sum += contrastive_objective(enc.net, batch, cfg.contrastive, cfg.weight_decay, &grads);
      ++steps;
      opt.step(enc.net.parameters(), grads);
    }
    const double mean_loss = loss_sum / static_cast<double>(steps);
    if (!std::isfinite(mean_loss)) throw NumericError("encoder training diverged at epoch " + std::to_string(epoch));
    const auto summary = summarize_pair_distances(enc, pairs);
    enc.log.push_back({epoch, mean_loss, summary.similar_mean, summary.dissimilar_mean});
  }
  return enc;
}

double encoder_pair_accuracy(const SimilarityEncoder& enc, const PairDataset& pairs, const ContrastiveSpec& spec) {
  if (pairs.pairs.empty()) throw ConfigError("pair accuracy over no pairs");
  std::size_t correct = 0;
  for (const auto& p : pairs.pairs) {
    const bool predict_similar = pair_distance(enc, p.first, p.second) < spec.margin / 2.0;
    if (predict_similar == (p.label == 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pairs.size());
}

void save_encoder(const std::filesystem::path& path, const SimilarityEncoder& enc) {
  std::vector<NamedTensor> t;
  append_net(t, enc.net, "net.");
  t.push_back({"meta", Tensor(Dims{2}, {enc.contrastive.margin, static_cast<double>(enc.seed)})});
  save_weights(path, t);
}

SimilarityEncoder load_encoder(const std::filesystem::path& path) {
  const auto t = load_weights(path);
  SimilarityEncoder enc;
  enc.net = extract_net(t, "net.");
  const Tensor& meta = find_tensor(t, "meta");
  if (meta.size() != 2) throw FormatError("encoder meta tensor malformed");
  enc.contrastive.margin = meta[0];
  enc.seed = static_cast<std::uint64_t>(meta[1]);
  return enc;
}

void write_encoder_log_csv(std::ostream& os, const std::vector<EncoderEpochRecord>& log) {
  os << "epoch,loss,similar_mean_distance,dissimilar_mean_distance\n";
  os.precision(17);
  for (const auto& r : log) os << r.epoch << ',' << r.loss << ',' << r.similar_mean << ',' << r.dissimilar_mean << '\n';
}

}  // namespace rpg
