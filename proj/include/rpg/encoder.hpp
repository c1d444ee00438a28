#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "rpg/data.hpp"
#include "rpg/nn.hpp"

namespace rpg {

struct ContrastiveSpec {
  double margin = 1.0;  // z
};

struct EncoderArch {
  std::size_t pool = 0;  // leading 2x2 average-pooling stages
  std::vector<std::size_t> hidden{256};
  std::size_t embedding = 32;
};

struct EncoderTrainConfig {
  std::size_t batch = 32;
  std::size_t epochs = 30;
  double learning_rate = 1e-4;
  double weight_decay = 1e-6;  // coefficient of the additive 0.5 * wd * |w|^2 term
  ContrastiveSpec contrastive;
};

struct EncoderEpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;            // mean contrastive loss over the epoch
  double similar_mean = 0.0;    // mean distance of l = 0 pairs after the epoch
  double dissimilar_mean = 0.0; // mean distance of l = 1 pairs after the epoch
};

/// One tower of the siamese pair; both pair members go through the same weights.
struct SimilarityEncoder {
  FeedforwardNet net;
  ContrastiveSpec contrastive;
  std::uint64_t seed = 0;
  std::vector<EncoderEpochRecord> log;

  std::size_t embedding_dim() const { return dims_product(net.output_dims()); }
  const Dims& input_dims() const { return net.input_dims(); }
  Tensor embed(const Tensor& x) const { return net.forward(x); }
};

/// [avg_pool]* -> flatten -> [affine -> relu]* -> affine(e), no output activation.
SimilarityEncoder make_encoder(const Dims& input_dims, const EncoderArch& arch, std::uint64_t seed,
                               ContrastiveSpec contrastive = {});

double pair_distance(const SimilarityEncoder& enc, const Tensor& x1, const Tensor& x2);

/// The two additive parts of the contrastive loss: similar (l = 0) and dissimilar (l = 1).
struct ContrastiveTerms {
  double similar = 0.0;
  double dissimilar = 0.0;
  double total() const { return similar + dissimilar; }
};

ContrastiveTerms contrastive_terms(double distance, std::uint32_t label, const ContrastiveSpec& spec);
double contrastive_loss(const SimilarityEncoder& enc, const SamplePair& pair, const ContrastiveSpec& spec);
/// Sum over all pairs.
double contrastive_loss(const SimilarityEncoder& enc, const PairDataset& pairs, const ContrastiveSpec& spec);

/// Mean contrastive loss over `pairs` plus 0.5 * wd * |w|^2, and its parameter gradient.
double contrastive_objective(const FeedforwardNet& net, const std::vector<SamplePair>& pairs,
                             const ContrastiveSpec& spec, double weight_decay, std::vector<Tensor>* grads);

SimilarityEncoder train_encoder(const PairDataset& pairs, const EncoderArch& arch, const EncoderTrainConfig& cfg,
                                std::uint64_t seed);

/// Fraction of pairs classified correctly by predicting "similar" iff distance < margin / 2.
double encoder_pair_accuracy(const SimilarityEncoder& enc, const PairDataset& pairs, const ContrastiveSpec& spec);

struct PairDistanceSummary {
  double similar_mean = 0.0;
  double dissimilar_mean = 0.0;
};
PairDistanceSummary summarize_pair_distances(const SimilarityEncoder& enc, const PairDataset& pairs);

void save_encoder(const std::filesystem::path& path, const SimilarityEncoder& enc);
SimilarityEncoder load_encoder(const std::filesystem::path& path);
void write_encoder_log_csv(std::ostream& os, const std::vector<EncoderEpochRecord>& log);

}  // namespace rpg
