#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "distillery/core_math.hpp"
#include "distillery/distillation.hpp"
#include "distillery/models.hpp"

namespace distillery {

class ParseError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, truncated, trailing_bytes, count_mismatch, bad_size, arity, bad_value };

  ParseError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// n images of H x W x C unsigned bytes with class labels. Pixel layout is
/// whatever the source format uses: row-major for IDX, channel-planar
/// (all R, then G, then B) for CIFAR-10.
struct ImageSet {
  std::size_t n = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::size_t classes = 10;
  std::vector<std::uint8_t> pixels;
  std::vector<std::uint8_t> labels;

  std::size_t image_size() const { return height * width * channels; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return {pixels.data() + i * image_size(), image_size()};
  }
};

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarRecordBytes = 1 + 32 * 32 * 3;

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Big-endian IDX: images (magic 0x803; n, rows, cols) and labels (0x801; n).
ImageSet parse_idx(std::span<const std::uint8_t> images, std::span<const std::uint8_t> labels);
ImageSet load_idx(const std::filesystem::path& images_path,
                  const std::filesystem::path& labels_path);
std::vector<std::uint8_t> encode_idx_images(const ImageSet& set);
std::vector<std::uint8_t> encode_idx_labels(const ImageSet& set);

/// CIFAR-10 binary records: 1 label byte then 3072 channel-planar pixels.
ImageSet parse_cifar(std::span<const std::uint8_t> bytes);
ImageSet load_cifar(std::span<const std::filesystem::path> batch_paths);

/// Pixels scaled to [0, 1], in storage order.
Vector image_features(const ImageSet& set, std::size_t i);

/// Non-overlapping block means of a real-valued image.
Vector block_mean(const Vector& image, std::size_t height, std::size_t width, std::size_t block);
/// Nearest-neighbour upsampling by an integer factor.
Vector upsample_replicate(const Vector& image, std::size_t height, std::size_t width,
                          std::size_t factor);
/// 28x28 grayscale bytes to 7x7 reals in [0, 1] via 4x4 block means.
Vector downscale(std::span<const std::uint8_t> image, std::size_t height = 28,
                 std::size_t width = 28);

/// Adds i.i.d. N(0, sigma^2) noise to every component; no clipping.
Vector pollute(const Vector& features, double sigma, RngStream& rng);

/// Shared inputs plus task outputs; the SARCOS layout is 21 inputs followed
/// by 7 joint torques per row.
using MultitaskTable = MultitaskData;
constexpr std::size_t kSarcosInputs = 21;
constexpr std::size_t kSarcosOutputs = 7;

/// Delimiter-separated numeric table with `inputs + outputs` columns per row.
/// Blank lines and lines starting with '#' are ignored.
MultitaskTable parse_multitask_csv(const std::string& text, char delimiter = ',',
                                   std::size_t inputs = kSarcosInputs,
                                   std::size_t outputs = kSarcosOutputs);
MultitaskTable load_multitask_csv(const std::filesystem::path& path, char delimiter = ',',
                                  std::size_t inputs = kSarcosInputs,
                                  std::size_t outputs = kSarcosOutputs);

/// Per-column affine standardization fitted on one matrix and applied to
/// others. Constant columns are centred but left unscaled.
struct ColumnScaler {
  Vector mean;
  Vector scale;

  static ColumnScaler fit(const RowMatrix& m);
  RowMatrix apply(const RowMatrix& m) const;
};

}  // namespace distillery
