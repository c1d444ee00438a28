#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "rpg/tensor.hpp"

namespace rpg {

enum class Domain : std::uint32_t { source = 0, target = 1 };

/// Images of identical dims, values in [-1, 1], labels in [0, num_classes).
struct LabeledDataset {
  std::vector<Tensor> samples;
  std::vector<std::uint32_t> labels;
  std::size_t num_classes = 0;
  Domain domain = Domain::source;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  const Dims& sample_dims() const;

  /// Throws ShapeError / ConfigError if any invariant is broken.
  void validate() const;

  /// Samples [first, first + count).
  LabeledDataset slice(std::size_t first, std::size_t count) const;
  LabeledDataset select(const std::vector<std::size_t>& indices) const;
};

/// Pair label: 0 = same class ("similar"), 1 = different class ("dissimilar").
struct SamplePair {
  Tensor first;
  Tensor second;
  std::uint32_t label = 0;
};

struct PairDataset {
  std::vector<SamplePair> pairs;
  std::size_t size() const noexcept { return pairs.size(); }
};

/// A d' x d' x c target sample centred in a d x d x c zero frame.
struct PaddingSpec {
  std::size_t inner = 16;
  std::size_t outer = 32;
  std::size_t channels = 3;

  std::size_t offset() const noexcept { return (outer - inner) / 2; }
  void validate() const;  // ConfigError unless 0 < inner < outer
  friend bool operator==(const PaddingSpec&, const PaddingSpec&) = default;
};

struct PaddedSample {
  Tensor padded;
  Tensor mask;  // 1 on the frame, 0 over the embedded sample
};

struct SourceDomainSpec {
  std::size_t classes = 12;
  std::size_t per_class = 50;
  std::size_t side = 32;
  std::size_t channels = 3;
};

struct TargetDomainSpec {
  std::size_t classes = 2;
  std::size_t per_class = 200;
  std::size_t side = 16;
  std::size_t channels = 3;
};

/// Oriented sinusoidal gratings; class sets orientation, frequency and phase.
/// Samples are emitted class-interleaved so any prefix is near-balanced.
LabeledDataset gen_source_dataset(std::uint64_t seed, const SourceDomainSpec& spec);

/// Gaussian blobs on a textured background; class c carries 2c + 1 blobs.
LabeledDataset gen_target_dataset(std::uint64_t seed, const TargetDomainSpec& spec);

Tensor reprogramming_mask(const PaddingSpec& spec);
PaddedSample pad_and_mask(const Tensor& x, const PaddingSpec& spec);

/// Exactly `count` distinct index pairs, round(count * balance) of them same-class.
PairDataset make_pairs(const LabeledDataset& ds, std::uint64_t seed, std::size_t count, double balance);

// Dataset file ("RPGD"): weights-format header and one tensor per sample, followed by
// u32 num_classes, u32 domain tag, u32 labels[count].
inline constexpr std::array<char, 4> kDatasetMagic{'R', 'P', 'G', 'D'};

void write_dataset(std::ostream& os, const LabeledDataset& ds);
LabeledDataset read_dataset(std::istream& is);
void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::filesystem::path& path);

}  // namespace rpg
