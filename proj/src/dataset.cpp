// SPDX-License-Identifier: Apache-2.0
#include "mpq/dataset.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <random>

namespace mpq {

Tensor Split::batch(std::span<const std::size_t> indices) const {
  const std::size_t item = item_size();
  std::vector<double> data(indices.size() * item);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size()) throw std::out_of_range("batch index out of range");
    std::copy_n(pixels.begin() + static_cast<std::ptrdiff_t>(indices[b] * item), item,
                data.begin() + static_cast<std::ptrdiff_t>(b * item));
  }
  Shape shape{indices.size()};
  shape.insert(shape.end(), item_shape.begin(), item_shape.end());
  return Tensor::from(std::move(shape), std::move(data));
}

std::vector<int> Split::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(labels.at(i));
  return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw DatasetError(path.string() + ": truncated IDX header");
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

std::vector<unsigned char> read_payload(std::istream& in, std::size_t count,
                                        const std::filesystem::path& path) {
  std::vector<unsigned char> data(count);
  if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count))) {
    throw DatasetError(path.string() + ": truncated payload, expected " + std::to_string(count) +
                       " bytes");
  }
  return data;
}

}  // namespace

Split load_idx_split(const std::filesystem::path& images, const std::filesystem::path& labels) {
  std::ifstream img(images, std::ios::binary);
  if (!img) throw DatasetError("cannot open " + images.string());
  if (const auto magic = read_be32(img, images); magic != kIdxImageMagic) {
    throw DatasetError(images.string() + ": bad magic for an image file");
  }
  const std::size_t count = read_be32(img, images);
  const std::size_t rows = read_be32(img, images);
  const std::size_t cols = read_be32(img, images);
  const auto pix = read_payload(img, count * rows * cols, images);

  std::ifstream lab(labels, std::ios::binary);
  if (!lab) throw DatasetError("cannot open " + labels.string());
  if (const auto magic = read_be32(lab, labels); magic != kIdxLabelMagic) {
    throw DatasetError(labels.string() + ": bad magic for a label file");
  }
  const std::size_t label_count = read_be32(lab, labels);
  if (label_count != count) {
    throw DatasetError("image/label count mismatch: " + std::to_string(count) + " images, " +
                       std::to_string(label_count) + " labels");
  }
  const auto lbl = read_payload(lab, label_count, labels);

  Split s;
  s.item_shape = {1, rows, cols};
  s.pixels.resize(pix.size());
  for (std::size_t i = 0; i < pix.size(); ++i) s.pixels[i] = static_cast<double>(pix[i]) / 255.0;
  s.labels.assign(lbl.begin(), lbl.end());
  return s;
}

DatasetHandle load_idx_dataset(const std::filesystem::path& images,
                               const std::filesystem::path& labels,
                               const std::filesystem::path& val_images,
                               const std::filesystem::path& val_labels) {
  DatasetHandle h;
  h.train = load_idx_split(images, labels);
  if (!val_images.empty()) {
    h.val = load_idx_split(val_images, val_labels);
    if (h.val.item_shape != h.train.item_shape) {
      throw DatasetError("validation images have shape " + shape_str(h.val.item_shape) +
                         ", training images " + shape_str(h.train.item_shape));
    }
  } else {
    h.val.item_shape = h.train.item_shape;
  }
  int max_label = 0;
  for (int l : h.train.labels) max_label = std::max(max_label, l);
  for (int l : h.val.labels) max_label = std::max(max_label, l);
  h.meta.classes = static_cast<std::size_t>(max_label) + 1;
  h.meta.input_shape = h.train.item_shape;
  h.meta.train_count = h.train.size();
  h.meta.val_count = h.val.size();
  return h;
}

void write_idx_images(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
                      std::span<const std::uint8_t> pixels) {
  if (rows == 0 || cols == 0 || pixels.size() % (rows * cols) != 0) {
    throw DatasetError("write_idx_images: pixel count is not a multiple of rows*cols");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  write_be32(out, kIdxImageMagic);
  write_be32(out, static_cast<std::uint32_t>(pixels.size() / (rows * cols)));
  write_be32(out, static_cast<std::uint32_t>(rows));
  write_be32(out, static_cast<std::uint32_t>(cols));
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void write_idx_labels(const std::filesystem::path& path, std::span<const std::uint8_t> labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write " + path.string());
  write_be32(out, kIdxLabelMagic);
  write_be32(out, static_cast<std::uint32_t>(labels.size()));
  out.write(reinterpret_cast<const char*>(labels.data()), static_cast<std::streamsize>(labels.size()));
}

namespace {

Split synth_split(const std::vector<std::vector<double>>& prototypes, const SynthSpec& spec,
                  std::size_t count, std::mt19937_64& rng) {
  Split s;
  s.item_shape = spec.input_shape;
  const std::size_t item = shape_numel(spec.input_shape);
  s.labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) s.labels[i] = static_cast<int>(i % spec.classes);
  std::shuffle(s.labels.begin(), s.labels.end(), rng);
  std::normal_distribution<double> noise(0.0, spec.noise);
  s.pixels.resize(count * item);
  for (std::size_t i = 0; i < count; ++i) {
    const auto& proto = prototypes[static_cast<std::size_t>(s.labels[i])];
    for (std::size_t p = 0; p < item; ++p) {
      s.pixels[i * item + p] = std::clamp(proto[p] + noise(rng), 0.0, 1.0);
    }
  }
  return s;
}

}  // namespace

DatasetHandle synth_dataset(const SynthSpec& spec) {
  if (spec.classes < 2) throw std::invalid_argument("synth_dataset: need at least 2 classes");
  if (spec.input_shape.size() != 3 || shape_numel(spec.input_shape) == 0) {
    throw std::invalid_argument("synth_dataset: input shape must be [C,H,W]");
  }
  std::mt19937_64 rng(spec.seed);
  const std::size_t item = shape_numel(spec.input_shape);
  std::normal_distribution<double> proto_dist(0.5, spec.prototype_spread);
  std::vector<std::vector<double>> prototypes(spec.classes, std::vector<double>(item));
  for (auto& p : prototypes)
    for (double& x : p) x = std::clamp(proto_dist(rng), 0.0, 1.0);

  DatasetHandle h;
  h.train = synth_split(prototypes, spec, spec.train_samples, rng);
  h.val = synth_split(prototypes, spec, spec.val_samples, rng);
  h.meta.classes = spec.classes;
  h.meta.input_shape = spec.input_shape;
  h.meta.train_count = h.train.size();
  h.meta.val_count = h.val.size();
  return h;
}

}  // namespace mpq
