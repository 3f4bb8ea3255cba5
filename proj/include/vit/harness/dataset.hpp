#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vit/rng.hpp"
#include "vit/tensor.hpp"

namespace vit {

/// Labeled u8 images, all H x W x C interleaved.
struct Dataset {
  std::string name;
  std::string split;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::size_t num_classes = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint16_t> labels;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t image_bytes() const noexcept { return height * width * channels; }
  std::span<const std::uint8_t> image(std::size_t i) const;
  /// Throws DataError on inconsistent sizes or labels >= num_classes.
  void validate() const;
  Dataset subset(std::span<const std::size_t> indices) const;
  /// First n examples (or all if n == 0 or n >= size).
  Dataset head(std::size_t n) const;
};

/// value / 127.5 - 1, so 0 -> -1 and 255 -> 1.
inline float normalize_pixel(std::uint8_t v) noexcept { return static_cast<float>(v) / 127.5f - 1.0f; }

template <typename T>
Tensor<T> normalize_images(std::span<const std::uint8_t> pixels, const Shape& shape);

/// Normalized [n x H x W x C] tensor of the listed examples.
template <typename T>
Tensor<T> images_tensor(const Dataset& data, std::span<const std::size_t> indices);

std::vector<std::size_t> labels_of(const Dataset& data, std::span<const std::size_t> indices);

/// Reads one CIFAR-10 binary batch file (3073-byte records).
Dataset load_cifar10_file(const std::filesystem::path& path);

/// Standard CIFAR-10 binary directory: split "train" reads data_batch_1..5,
/// "test" reads test_batch.
Dataset load_cifar10(const std::filesystem::path& dir, const std::string& split);

/// Every image bilinearly resampled (corners aligned) to h x w, rounded to u8.
Dataset resize_dataset(const Dataset& data, std::size_t h, std::size_t w);

/// Reads a binary PPM (P6, maxval 255).
Dataset load_ppm(const std::filesystem::path& path);

/// All CIFAR-10 .bin batches or .ppm images in a directory (name order), or a
/// single such file. PPM images get label 0 and must share one size.
Dataset load_image_source(const std::filesystem::path& path);

enum class Separability { trivial, easy, hard };
std::string to_string(Separability s);
Separability parse_separability(const std::string& name);

struct SyntheticSpec {
  std::size_t count = 512;
  std::size_t num_classes = 10;
  std::size_t height = 32;
  std::size_t width = 32;
  Separability separability = Separability::easy;
};

/// Procedural images: a class-coloured rectangle on a noisy background.
/// trivial fills the whole frame with the class colour.
Dataset synthetic_dataset(const SyntheticSpec& spec, std::uint64_t seed, const std::string& split = "train");

struct AugmentConfig {
  bool enabled = false;
  bool flip = true;
  std::size_t pad = 4;
};

/// Random horizontal flip and zero-padded random crop of one u8 image in place.
void augment_image(std::span<std::uint8_t> image, std::size_t h, std::size_t w, std::size_t c,
                   const AugmentConfig& cfg, Rng& rng);

struct Batch {
  Shape shape;                        // [n x H x W x C]
  std::vector<std::uint8_t> pixels;   // after augmentation
  Tensor<float> images;               // normalized pixels
  std::vector<std::size_t> labels;
  std::vector<std::size_t> indices;   // dataset rows
};

/// Index lists of one epoch: a permutation fixed by (seed, epoch) when
/// shuffling, split into batches; the last partial batch is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                                    std::size_t epoch, bool shuffle = true);

Batch make_batch(const Dataset& data, std::span<const std::size_t> indices, const AugmentConfig& aug, Rng& rng);

/// Sequential batch iterator over one epoch.
class Batches {
 public:
  Batches(const Dataset& data, std::size_t batch_size, std::uint64_t seed, std::size_t epoch, bool shuffle = true,
          AugmentConfig aug = {});

  std::size_t count() const noexcept { return order_.size(); }
  /// Builds batch i; augmentation draws from (seed, epoch, i).
  Batch get(std::size_t i) const;
  bool next(Batch& out);

 private:
  const Dataset* data_;
  std::uint64_t seed_;
  std::size_t epoch_;
  AugmentConfig aug_;
  std::vector<std::vector<std::size_t>> order_;
  std::size_t cursor_ = 0;
};

}  // namespace vit
