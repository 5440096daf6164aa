#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bifl/rng.hpp"
#include "bifl/tensor.hpp"

namespace bifl {

struct Dataset {
  // {n, 1, h, w} for image sources, {n, d} for flat synthetic blobs. The
  // dense layer flattens either; the conv path needs the 4-d form.
  Tensor images;
  std::vector<int> labels;
  int classes = 0;

  size_t size() const { return labels.size(); }
};

// IDX (big-endian) reader: images magic 0x00000803, labels 0x00000801,
// pixels scaled to [0,1]. Malformed input errors name the byte offset.
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

// Writes the u8 IDX pair; pixels are rounded to the nearest /255 step, so
// datasets whose pixels already sit on that lattice round-trip exactly.
void save_idx(const Dataset& ds, const std::string& images_path, const std::string& labels_path);

// Gaussian class blobs in d dimensions; labels cycle 0..classes-1.
Dataset synth_gaussian(int classes, int per_class, int dims, uint64_t seed);

// Deterministic 28x28 ten-class image corpus: per-class prototypes built
// from random smooth bumps, each sample a shifted, contrast-jittered, noisy
// copy, quantized to the /255 pixel lattice. Sample i depends only on
// (seed, index_offset + i), so train/test splits come from disjoint offset
// ranges and generation order is irrelevant.
Dataset synth_digits(int count, uint64_t seed, uint64_t index_offset = 0,
                     double noise_sigma = 0.25, int max_shift = 3);

struct Partition {
  std::vector<std::vector<int>> shards;  // client id -> ascending sample rows
  size_t dropped = 0;                    // rows not assigned to any shard
};

// Even split, stratified by class: every shard gets floor(count_c/m) rows of
// every class c; remainders are dropped (at most classes*(m-1) rows).
Partition partition_iid(const std::vector<int>& labels, int classes, int m, Rng& rng);

// Label-skewed split: every class is cut into s = m*n_c/classes equal
// subdatasets (that quotient must be an integer), and each client draws
// exactly n_c subdatasets from the shuffled pool, touching at most n_c
// classes. All shards have equal size.
Partition partition_noniid(const std::vector<int>& labels, int classes, int m, int n_c, Rng& rng);

// Fixed 100-client size-skewed split: 20 clients hold 40% of the data, 40
// hold 40%, 40 hold 20% (per-client sizes |D|/50, |D|/100, |D|/200; |D|
// must divide by 200). Shards are class-proportional via largest-remainder
// quotas, exact for class-balanced input.
Partition partition_unbalanced(const std::vector<int>& labels, int classes, Rng& rng);

// count rows, class-proportional (floor(count/classes) each, earlier classes
// take the remainder), ascending row order.
std::vector<int> stratified_subset(const std::vector<int>& labels, int classes, int count,
                                   Rng& rng);

Dataset take(const Dataset& ds, const std::vector<int>& rows);

}  // namespace bifl
