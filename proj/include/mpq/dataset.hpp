// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "mpq/tensor.hpp"

namespace mpq {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Images stored contiguously as [count, item_shape...] with pixels in [0,1].
struct Split {
  Shape item_shape;
  std::vector<double> pixels;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t item_size() const { return shape_numel(item_shape); }
  // Gathers the listed items into a [batch, item_shape...] tensor.
  Tensor batch(std::span<const std::size_t> indices) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

struct DatasetMeta {
  std::size_t classes = 0;
  Shape input_shape;  // [C, H, W]
  std::size_t train_count = 0;
  std::size_t val_count = 0;
};

struct DatasetHandle {
  Split train;
  Split val;
  DatasetMeta meta;
};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Reads an IDX image file (3-d, unsigned bytes) and its label file into one
// split of shape [count, 1, rows, cols].
Split load_idx_split(const std::filesystem::path& images, const std::filesystem::path& labels);

// Training data from the first pair; validation from the optional second
// pair (empty when absent). classes = 1 + largest label seen.
DatasetHandle load_idx_dataset(const std::filesystem::path& images,
                               const std::filesystem::path& labels,
                               const std::filesystem::path& val_images = {},
                               const std::filesystem::path& val_labels = {});

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels);
void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels);

struct SynthSpec {
  std::size_t classes = 10;
  std::size_t train_samples = 2000;
  std::size_t val_samples = 500;
  Shape input_shape = {1, 8, 8};
  double prototype_spread = 0.25;
  double noise = 0.35;
  std::uint64_t seed = 0;
};

// Gaussian class prototypes plus per-sample Gaussian noise, clipped to [0,1].
// Classes are balanced (round-robin labels, then a seeded shuffle).
DatasetHandle synth_dataset(const SynthSpec& spec);

}  // namespace mpq
