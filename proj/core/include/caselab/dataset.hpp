#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "caselab/tensor.hpp"

namespace caselab {

using ClassIndex = std::size_t;

inline constexpr std::size_t kClassCount = 8;
inline constexpr std::size_t kImageSide = 32;
inline constexpr std::size_t kPixelCount = kImageSide * kImageSide;

/// Class labels in index order. Disk/ring and the three striped patterns are
/// the intentionally confusable groups.
enum class ShapeClass : std::uint16_t {
  kDisk = 0,
  kRing,
  kSquare,
  kTriangle,
  kCross,
  kHorizontalStripes,
  kVerticalStripes,
  kCheckerboard,
};

std::string_view class_name(ClassIndex c);

struct LabeledImage {
  Tensor pixels;  // [1 x 32 x 32], values in [0, 1]
  ClassIndex label = 0;

  friend bool operator==(const LabeledImage&, const LabeledImage&) = default;
};

struct SplitFractions {
  double train = 0.6;
  double validation = 0.2;
  double test = 0.2;
};

struct DatasetSplit {
  std::vector<LabeledImage> train;
  std::vector<LabeledImage> validation;
  std::vector<LabeledImage> test;
  std::uint64_t seed = 0;
  std::size_t class_count = kClassCount;
};

/// Renders `per_class` images of every class, class-major. Class c draws
/// from its own stream seeded with `seed ^ c`, so output is a pure function
/// of the arguments. Pixels are rounded to float precision so the binary
/// container round-trips exactly.
std::vector<LabeledImage> generate(std::uint64_t seed, std::size_t per_class);

/// Stratified seeded split. Each class is shuffled independently and cut
/// at round(train*n) and round((train+validation)*n). Within a split,
/// images keep their input order.
DatasetSplit split(const std::vector<LabeledImage>& images, SplitFractions fractions,
                   std::uint64_t seed);

/// Mean pixel value over a set of images (the ablation fill value).
double mean_pixel(const std::vector<LabeledImage>& images);

std::array<std::size_t, kClassCount> class_counts(const std::vector<LabeledImage>& images);

// "CASED1\0" container: magic, u32 version, u32 count, then per image a
// u16 label and 1024 little-endian float32 pixels.
std::vector<std::uint8_t> encode_dataset(const std::vector<LabeledImage>& images);
std::vector<LabeledImage> decode_dataset(std::span<const std::uint8_t> bytes);
void save_dataset(const std::filesystem::path& path, const std::vector<LabeledImage>& images);
std::vector<LabeledImage> load_dataset(const std::filesystem::path& path);

}  // namespace caselab
