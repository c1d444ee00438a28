#include "rpg/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <utility>

#include "rpg/errors.hpp"
#include "rpg/io.hpp"

namespace rpg {

const Dims& LabeledDataset::sample_dims() const {
  if (samples.empty()) throw ShapeError("empty dataset has no sample dims");
  return samples.front().dims();
}

void LabeledDataset::validate() const {
  if (samples.size() != labels.size()) throw ShapeError("dataset samples/labels length mismatch");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].dims() != samples.front().dims()) throw ShapeError("dataset samples have mixed dims");
    if (labels[i] >= num_classes) throw ConfigError("label " + std::to_string(labels[i]) + " out of range");
    for (double v : samples[i].values())
      if (!(v >= -1.0 && v <= 1.0)) throw ShapeError("sample value outside [-1, 1]");
  }
}

LabeledDataset LabeledDataset::slice(std::size_t first, std::size_t count) const {
  if (first + count > size()) throw ConfigError("dataset slice out of range");
  LabeledDataset out{{}, {}, num_classes, domain};
  out.samples.assign(samples.begin() + static_cast<std::ptrdiff_t>(first),
                     samples.begin() + static_cast<std::ptrdiff_t>(first + count));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(first),
                    labels.begin() + static_cast<std::ptrdiff_t>(first + count));
  return out;
}

LabeledDataset LabeledDataset::select(const std::vector<std::size_t>& indices) const {
  LabeledDataset out{{}, {}, num_classes, domain};
  for (auto i : indices) {
    out.samples.push_back(samples.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

void PaddingSpec::validate() const {
  if (inner == 0 || channels == 0) throw ConfigError("padding: inner size and channels must be positive");
  if (inner >= outer)
    throw ConfigError("padding: target size " + std::to_string(inner) + " must be smaller than input size " +
                      std::to_string(outer));
}

namespace {

double clip(double v) { return std::clamp(v, -1.0, 1.0); }

}  // namespace

LabeledDataset gen_source_dataset(std::uint64_t seed, const SourceDomainSpec& spec) {
  if (spec.classes < 1 || spec.side == 0 || spec.channels == 0) throw ConfigError("source domain: bad spec");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> amp(0.5, 0.8);
  std::uniform_real_distribution<double> jitter(-0.4, 0.4);
  std::normal_distribution<double> noise(0.0, 0.15);
  const double d = static_cast<double>(spec.side);
  constexpr double pi = std::numbers::pi;

  LabeledDataset ds{{}, {}, spec.classes, Domain::source};
  for (std::size_t n = 0; n < spec.per_class; ++n) {
    for (std::size_t k = 0; k < spec.classes; ++k) {
      const double theta = pi * static_cast<double>(k % 6) / 6.0;
      const double freq = 2.0 + 2.0 * static_cast<double>((k / 6) % 3);
      const double phase = 0.9 * static_cast<double>(k);
      const double a = amp(rng);
      const double dphi = jitter(rng);
      Tensor x = Tensor::image(spec.side, spec.channels);
      for (std::size_t r = 0; r < spec.side; ++r)
        for (std::size_t c = 0; c < spec.side; ++c) {
          const double u = (static_cast<double>(r) * std::cos(theta) + static_cast<double>(c) * std::sin(theta)) / d;
          for (std::size_t ch = 0; ch < spec.channels; ++ch) {
            const double wave = std::cos(2.0 * pi * freq * u + phase + dphi + 0.5 * static_cast<double>(ch));
            x.at(r, c, ch) = clip(a * wave + noise(rng));
          }
        }
      ds.samples.push_back(std::move(x));
      ds.labels.push_back(static_cast<std::uint32_t>(k));
    }
  }
  return ds;
}

LabeledDataset gen_target_dataset(std::uint64_t seed, const TargetDomainSpec& spec) {
  if (spec.classes < 1 || spec.side == 0 || spec.channels == 0) throw ConfigError("target domain: bad spec");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const double side = static_cast<double>(spec.side);
  std::uniform_real_distribution<double> pos(0.15 * side, 0.85 * side);
  std::uniform_real_distribution<double> radius(0.11 * side, 0.14 * side);
  std::uniform_real_distribution<double> amp(0.7, 0.9);
  std::normal_distribution<double> texture(0.0, 0.1);

  LabeledDataset ds{{}, {}, spec.classes, Domain::target};
  for (std::size_t n = 0; n < spec.per_class; ++n) {
    for (std::size_t k = 0; k < spec.classes; ++k) {
      Tensor x = Tensor::image(spec.side, spec.channels, -0.5);
      const std::size_t blobs = 2 * k + 1;
      for (std::size_t b = 0; b < blobs; ++b) {
        const double cr = pos(rng), cc = pos(rng), rad = radius(rng), a = amp(rng);
        for (std::size_t r = 0; r < spec.side; ++r)
          for (std::size_t c = 0; c < spec.side; ++c) {
            const double dr = static_cast<double>(r) - cr, dc = static_cast<double>(c) - cc;
            const double g = a * std::exp(-(dr * dr + dc * dc) / (2.0 * rad * rad));
            for (std::size_t ch = 0; ch < spec.channels; ++ch)
              x.at(r, c, ch) += g * (1.0 - 0.2 * static_cast<double>(ch));
          }
      }
      for (auto& v : x.values()) v = clip(v + texture(rng));
      ds.samples.push_back(std::move(x));
      ds.labels.push_back(static_cast<std::uint32_t>(k));
    }
  }
  return ds;
}

Tensor reprogramming_mask(const PaddingSpec& spec) {
  spec.validate();
  Tensor m = Tensor::image(spec.outer, spec.channels, 1.0);
  const std::size_t o = spec.offset();
  for (std::size_t r = o; r < o + spec.inner; ++r)
    for (std::size_t c = o; c < o + spec.inner; ++c)
      for (std::size_t ch = 0; ch < spec.channels; ++ch) m.at(r, c, ch) = 0.0;
  return m;
}

PaddedSample pad_and_mask(const Tensor& x, const PaddingSpec& spec) {
  spec.validate();
  if (x.dims() != Dims{spec.inner, spec.inner, spec.channels})
    throw ShapeError("pad: sample dims " + dims_to_string(x.dims()) + " do not match " +
                     dims_to_string({spec.inner, spec.inner, spec.channels}));
  PaddedSample out{Tensor::image(spec.outer, spec.channels), reprogramming_mask(spec)};
  const std::size_t o = spec.offset();
  for (std::size_t r = 0; r < spec.inner; ++r)
    for (std::size_t c = 0; c < spec.inner; ++c)
      for (std::size_t ch = 0; ch < spec.channels; ++ch) out.padded.at(r + o, c + o, ch) = x.at(r, c, ch);
  return out;
}

PairDataset make_pairs(const LabeledDataset& ds, std::uint64_t seed, std::size_t count, double balance) {
  if (!(balance >= 0.0 && balance <= 1.0)) throw ConfigError("pair balance must lie in [0, 1]");
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.labels[i]).push_back(i);
  for (const auto& members : by_class)
    if (members.size() < 2) throw ConfigError("make_pairs: every class needs at least 2 samples");

  const auto n_similar = static_cast<std::size_t>(std::llround(static_cast<double>(count) * balance));
  const std::size_t n_dissimilar = count - n_similar;
  std::size_t avail_similar = 0;
  for (const auto& m : by_class) avail_similar += m.size() * (m.size() - 1) / 2;
  const std::size_t avail_all = ds.size() * (ds.size() - 1) / 2;
  if (n_similar > avail_similar || n_dissimilar > avail_all - avail_similar)
    throw ConfigError("make_pairs: requested " + std::to_string(count) + " pairs exceed the distinct pairs available");

  std::mt19937_64 rng(seed);
  std::set<std::pair<std::size_t, std::size_t>> used;
  std::vector<std::pair<std::size_t, std::size_t>> chosen;
  chosen.reserve(count);

  auto sample = [&](bool similar, std::size_t want, std::size_t available) {
    if (want == 0) return;
    if (want * 2 > available) {
      // dense request: enumerate and shuffle
      std::vector<std::pair<std::size_t, std::size_t>> all;
      for (std::size_t i = 0; i < ds.size(); ++i)
        for (std::size_t j = i + 1; j < ds.size(); ++j)
          if ((ds.labels[i] == ds.labels[j]) == similar) all.emplace_back(i, j);
      std::shuffle(all.begin(), all.end(), rng);
      chosen.insert(chosen.end(), all.begin(), all.begin() + static_cast<std::ptrdiff_t>(want));
      return;
    }
    std::uniform_int_distribution<std::size_t> pick_class(0, ds.num_classes - 1);
    std::uniform_int_distribution<std::size_t> pick_any(0, ds.size() - 1);
    std::size_t got = 0;
    while (got < want) {
      std::size_t i, j;
      if (similar) {
        const auto& m = by_class[pick_class(rng)];
        std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
        i = m[pick(rng)];
        j = m[pick(rng)];
      } else {
        i = pick_any(rng);
        j = pick_any(rng);
        if (ds.labels[i] == ds.labels[j]) continue;
      }
      if (i == j) continue;
      if (i > j) std::swap(i, j);
      if (!used.emplace(i, j).second) continue;
      chosen.emplace_back(i, j);
      ++got;
    }
  };
  sample(true, n_similar, avail_similar);
  sample(false, n_dissimilar, avail_all - avail_similar);
  std::shuffle(chosen.begin(), chosen.end(), rng);

  PairDataset out;
  out.pairs.reserve(count);
  for (auto [i, j] : chosen)
    out.pairs.push_back({ds.samples[i], ds.samples[j], ds.labels[i] == ds.labels[j] ? 0u : 1u});
  return out;
}

void write_dataset(std::ostream& os, const LabeledDataset& ds) {
  if (ds.samples.size() != ds.labels.size()) throw ShapeError("dataset samples/labels length mismatch");
  std::vector<NamedTensor> tensors;
  tensors.reserve(ds.size());
  for (const auto& s : ds.samples) tensors.push_back({"", s});
  write_tensor_file(os, kDatasetMagic, tensors);
  BinaryWriter w(os);
  w.u32(static_cast<std::uint32_t>(ds.num_classes));
  w.u32(static_cast<std::uint32_t>(ds.domain));
  for (auto l : ds.labels) w.u32(l);
}

LabeledDataset read_dataset(std::istream& is) {
  auto tensors = read_tensor_file(is, kDatasetMagic);
  BinaryReader r(is);
  LabeledDataset ds;
  ds.num_classes = r.u32();
  const auto tag = r.u32();
  if (tag > 1) throw FormatError("unknown domain tag " + std::to_string(tag));
  ds.domain = static_cast<Domain>(tag);
  ds.samples.reserve(tensors.size());
  for (auto& t : tensors) ds.samples.push_back(std::move(t.tensor));
  ds.labels.resize(ds.samples.size());
  for (auto& l : ds.labels) l = r.u32();
  try {
    ds.validate();
  } catch (const std::exception& e) {
    throw FormatError(std::string("invalid dataset contents: ") + e.what());
  }
  return ds;
}

void save_dataset(const std::filesystem::path& path, const LabeledDataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  write_dataset(os, ds);
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  return read_dataset(is);
}

}  // namespace rpg
