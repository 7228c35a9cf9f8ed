// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "psl/tensor.hpp"

namespace psl {

/// Features plus ground-truth labels. Datum ids are row indices, fixed at creation.
struct Dataset {
  Tensor features;                 // [N x d]
  std::vector<int> labels;         // true class per datum, in [0, classes)
  std::size_t classes = 0;
  std::vector<int> superclass;     // class -> superclass id; empty when there is none

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  bool has_superclasses() const { return !superclass.empty(); }

  void validate() const;
  /// New dataset holding the given rows, renumbered 0..ids.size()-1.
  Dataset subset(std::span<const std::size_t> ids) const;
};

/// Gaussian blobs with centers evenly spaced on the unit circle (first two
/// coordinates; remaining coordinates are centered at zero). Labels cycle
/// 0..C-1 so classes are balanced. Adjacent centers (2k, 2k+1) share superclass k.
Dataset make_blobs(std::size_t n, std::size_t classes, std::size_t dim, double spread,
                   std::uint64_t seed);

/// Two interleaving half circles with Gaussian noise, labels 0/1 alternating.
Dataset make_moons(std::size_t n, double noise, std::uint64_t seed);

/// Splits the first n_train rows from the rest.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t n_train);

/// CSV with a header row `f0,...,f{d-1},label`.
Dataset load_csv(const std::filesystem::path& path);
void write_csv(const Dataset& ds, const std::filesystem::path& path);

/// MNIST-style IDX pair: unsigned-byte images (magic 0x00000803) and labels
/// (magic 0x00000801), big-endian headers. Pixels are scaled to [0, 1].
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels);
/// Writes features (expected in [0,1]) as an IDX pair with images of size rows x cols.
void write_idx(const Dataset& ds, std::size_t rows, std::size_t cols,
               const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace psl
