#pragma once

#include <random>

#include "rpg/reprogram.hpp"
#include "rpg/tensor.hpp"

namespace testutil {

inline rpg::Tensor uniform(const rpg::Dims& dims, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  rpg::Tensor t(dims);
  for (auto& v : t.values()) v = u(rng);
  return t;
}

// 2x2x1 targets inside a 4x4x1 frame, 4 source classes mapped 2 per target label.
struct Tiny {
  rpg::PaddingSpec padding{2, 4, 1};
  rpg::LabelMapping mapping = rpg::LabelMapping::consecutive(4, 2, 2);
  rpg::Classifier clf;
  rpg::LabeledDataset ds;

  explicit Tiny(std::uint64_t seed, int n = 3) {
    clf.net = rpg::make_mlp({rpg::Dims{4, 4, 1}, {5}, 4, true}, seed);
    clf.num_classes = 4;
    std::mt19937_64 rng(seed);
    ds.num_classes = 2;
    ds.domain = rpg::Domain::target;
    for (int i = 0; i < n; ++i) {
      ds.samples.push_back(uniform({2, 2, 1}, rng));
      ds.labels.push_back(i % 2);
    }
  }
};

}  // namespace testutil
