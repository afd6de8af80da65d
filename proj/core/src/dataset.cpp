#include "caselab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>
#include <stdexcept>

#include "binary_io.hpp"
#include "caselab/random.hpp"

namespace caselab {

namespace {

constexpr std::string_view kDatasetMagic{"CASED1\0", 7};
constexpr std::uint32_t kDatasetVersion = 1;
constexpr double kNoiseAmplitude = 0.1;

// Membership test in pixel coordinates (x right, y down, origin at the
// top-left corner of the image).
using Inside = std::function<bool(double x, double y)>;

struct Placement {
  double cx;
  double cy;
  double scale;
};

Placement draw_placement(Rng& rng) {
  return {16.0 + rng.uniform(-3.0, 3.0), 16.0 + rng.uniform(-3.0, 3.0), rng.uniform(0.75, 1.2)};
}

// Square patch of half-size `half` around the placement centre.
bool in_patch(const Placement& p, double half, double x, double y) {
  return std::abs(x - p.cx) <= half && std::abs(y - p.cy) <= half;
}

Inside make_shape(ShapeClass cls, Rng& rng) {
  const Placement p = draw_placement(rng);
  switch (cls) {
    case ShapeClass::kDisk: {
      const double r = 6.0 * p.scale;
      return [=](double x, double y) { return std::hypot(x - p.cx, y - p.cy) <= r; };
    }
    case ShapeClass::kRing: {
      const double outer = 6.5 * p.scale;
      // Thick walls leave a small hole, which keeps rings close to disks.
      const double thickness = rng.uniform(0.35, 0.75) * outer;
      const double inner = outer - thickness;
      return [=](double x, double y) {
        const double d = std::hypot(x - p.cx, y - p.cy);
        return d <= outer && d >= inner;
      };
    }
    case ShapeClass::kSquare: {
      const double half = 6.0 * p.scale;
      return [=](double x, double y) { return in_patch(p, half, x, y); };
    }
    case ShapeClass::kTriangle: {
      const double half = 6.0 * p.scale;
      // Apex up, base at cy + half.
      return [=](double x, double y) {
        const double top = p.cy - half;
        const double t = (y - top) / (2.0 * half);
        return t >= 0.0 && t <= 1.0 && std::abs(x - p.cx) <= t * half;
      };
    }
    case ShapeClass::kCross: {
      const double arm = 6.5 * p.scale;
      const double width = rng.uniform(1.0, 2.0);
      return [=](double x, double y) {
        const double dx = std::abs(x - p.cx), dy = std::abs(y - p.cy);
        return (dx <= width && dy <= arm) || (dy <= width && dx <= arm);
      };
    }
    case ShapeClass::kHorizontalStripes:
    case ShapeClass::kVerticalStripes: {
      const double half = 7.0 * p.scale;
      const double period = static_cast<double>(4 + rng.below(3));
      const double phase = rng.uniform(0.0, period);
      const bool horizontal = cls == ShapeClass::kHorizontalStripes;
      return [=](double x, double y) {
        if (!in_patch(p, half, x, y)) return false;
        const double coord = horizontal ? y : x;
        return std::fmod(coord + phase, period) < period / 2.0;
      };
    }
    case ShapeClass::kCheckerboard: {
      const double half = 7.0 * p.scale;
      const double cell = static_cast<double>(2 + rng.below(3));
      const double px = rng.uniform(0.0, 2.0 * cell);
      const double py = rng.uniform(0.0, 2.0 * cell);
      return [=](double x, double y) {
        if (!in_patch(p, half, x, y)) return false;
        const auto ix = static_cast<long>(std::floor((x + px) / cell));
        const auto iy = static_cast<long>(std::floor((y + py) / cell));
        return ((ix + iy) & 1) == 0;
      };
    }
  }
  throw std::logic_error("unknown shape class");
}

// Classes 0-3 (solid shapes) and 4-7 (line patterns) form two families.
// Every image carries its family's context marker in a random corner, so
// classes within a family share evidence that is spatially separate from
// the evidence that tells them apart.
Inside make_marker(ShapeClass cls, Rng& rng) {
  const bool solid = static_cast<int>(cls) < 4;
  const std::uint64_t corner = rng.below(4);
  const double cx = ((corner & 1) ? 27.0 : 5.0) + rng.uniform(-1.0, 1.0);
  const double cy = ((corner & 2) ? 27.0 : 5.0) + rng.uniform(-1.0, 1.0);
  if (solid) {
    return [=](double x, double y) { return std::hypot(x - cx, y - cy) <= 3.0; };
  }
  return [=](double x, double y) {
    const double d = std::max(std::abs(x - cx), std::abs(y - cy));
    return d <= 3.5 && d >= 2.0;
  };
}

Tensor render(ShapeClass cls, Rng& rng) {
  const Inside shape = make_shape(cls, rng);
  const Inside marker = make_marker(cls, rng);
  const auto inside = [&](double x, double y) { return shape(x, y) || marker(x, y); };
  const double foreground = rng.uniform(0.6, 1.0);
  const double background = rng.uniform(0.0, 0.2);
  Tensor pixels({1, kImageSide, kImageSide});
  for (std::size_t y = 0; y < kImageSide; ++y) {
    for (std::size_t x = 0; x < kImageSide; ++x) {
      // 2x2 supersampling for soft edges.
      int hits = 0;
      for (double sy : {0.25, 0.75}) {
        for (double sx : {0.25, 0.75}) {
          hits += inside(static_cast<double>(x) + sx, static_cast<double>(y) + sy) ? 1 : 0;
        }
      }
      const double coverage = hits / 4.0;
      double v = background + (foreground - background) * coverage;
      v += rng.uniform(-kNoiseAmplitude, kNoiseAmplitude);
      v = std::clamp(v, 0.0, 1.0);
      pixels.at(0, y, x) = static_cast<double>(static_cast<float>(v));
    }
  }
  return pixels;
}

}  // namespace

std::string_view class_name(ClassIndex c) {
  static constexpr std::array<std::string_view, kClassCount> kNames = {
      "disk", "ring", "square", "triangle", "cross", "horizontal_stripes", "vertical_stripes",
      "checkerboard"};
  if (c >= kClassCount) throw std::out_of_range("class index " + std::to_string(c));
  return kNames[c];
}

std::vector<LabeledImage> generate(std::uint64_t seed, std::size_t per_class) {
  std::vector<LabeledImage> images;
  images.reserve(per_class * kClassCount);
  for (ClassIndex c = 0; c < kClassCount; ++c) {
    Rng rng(seed ^ static_cast<std::uint64_t>(c));
    for (std::size_t i = 0; i < per_class; ++i) {
      images.push_back({render(static_cast<ShapeClass>(c), rng), c});
    }
  }
  return images;
}

DatasetSplit split(const std::vector<LabeledImage>& images, SplitFractions fractions,
                   std::uint64_t seed) {
  const double parts[] = {fractions.train, fractions.validation, fractions.test};
  for (double f : parts) {
    if (!(f >= 0.0) || !std::isfinite(f)) {
      throw std::invalid_argument("split: fractions must be finite and non-negative");
    }
  }
  if (std::abs(fractions.train + fractions.validation + fractions.test - 1.0) > 1e-9) {
    throw std::invalid_argument("split: fractions must sum to 1");
  }

  std::array<std::vector<std::size_t>, kClassCount> by_class;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].label >= kClassCount) {
      throw std::invalid_argument("split: label out of range at image " + std::to_string(i));
    }
    by_class[images[i].label].push_back(i);
  }

  // 0 = train, 1 = validation, 2 = test
  std::vector<int> assignment(images.size(), 2);
  for (ClassIndex c = 0; c < kClassCount; ++c) {
    auto& members = by_class[c];
    Rng rng(mix_seed(seed) ^ static_cast<std::uint64_t>(c));
    rng.shuffle(std::span(members));
    const double n = static_cast<double>(members.size());
    const auto cut1 = static_cast<std::size_t>(std::llround(fractions.train * n));
    const auto cut2 = std::min(
        members.size(),
        static_cast<std::size_t>(std::llround((fractions.train + fractions.validation) * n)));
    for (std::size_t j = 0; j < members.size(); ++j) {
      assignment[members[j]] = j < cut1 ? 0 : (j < cut2 ? 1 : 2);
    }
  }

  DatasetSplit out;
  out.seed = seed;
  for (std::size_t i = 0; i < images.size(); ++i) {
    auto& dst = assignment[i] == 0 ? out.train : (assignment[i] == 1 ? out.validation : out.test);
    dst.push_back(images[i]);
  }
  return out;
}

double mean_pixel(const std::vector<LabeledImage>& images) {
  if (images.empty()) throw std::invalid_argument("mean_pixel: no images");
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& img : images) {
    for (double v : img.pixels.values()) total += v;
    count += img.pixels.size();
  }
  return total / static_cast<double>(count);
}

std::array<std::size_t, kClassCount> class_counts(const std::vector<LabeledImage>& images) {
  std::array<std::size_t, kClassCount> counts{};
  for (const auto& img : images) counts.at(img.label)++;
  return counts;
}

std::vector<std::uint8_t> encode_dataset(const std::vector<LabeledImage>& images) {
  detail::ByteWriter w;
  w.bytes(kDatasetMagic);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(images.size()));
  for (const auto& img : images) {
    if (img.pixels.size() != kPixelCount) {
      throw ShapeError("encode_dataset: image must have 1024 pixels, got " +
                       to_string(img.pixels.dims()));
    }
    w.u16(static_cast<std::uint16_t>(img.label));
    for (double v : img.pixels.values()) w.f32(static_cast<float>(v));
  }
  return w.take();
}

std::vector<LabeledImage> decode_dataset(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kDatasetMagic);
  const std::size_t version_at = r.offset();
  if (r.u32() != kDatasetVersion) throw ParseError("unsupported dataset version", version_at);
  const std::uint32_t count = r.u32();
  // Validate the declared size before allocating.
  r.need(static_cast<std::size_t>(count) * (2 + 4 * kPixelCount));
  std::vector<LabeledImage> images;
  images.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t label_at = r.offset();
    const std::uint16_t label = r.u16();
    if (label >= kClassCount) throw ParseError("label out of range", label_at);
    std::vector<double> px(kPixelCount);
    for (double& v : px) v = static_cast<double>(r.f32());
    images.push_back({Tensor({1, kImageSide, kImageSide}, std::move(px)), label});
  }
  if (!r.at_end()) throw ParseError("trailing bytes after dataset", r.offset());
  return images;
}

void save_dataset(const std::filesystem::path& path, const std::vector<LabeledImage>& images) {
  detail::write_file(path, encode_dataset(images));
}

std::vector<LabeledImage> load_dataset(const std::filesystem::path& path) {
  return decode_dataset(detail::read_file(path));
}

namespace detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path.string() + "'");
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace detail

}  // namespace caselab
