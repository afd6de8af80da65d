#include <algorithm>
#include <charconv>
#include <cmath>

#include "binary_io.hpp"
#include "caselab/saliency.hpp"

namespace caselab {

std::vector<std::uint8_t> pgm_bytes(const SaliencyMap& map) {
  const Tensor& v = map.values;
  if (v.rank() != 2) throw ShapeError("pgm_bytes: expected a rank-2 map, got " + to_string(v.dims()));
  const std::string header =
      "P5\n" + std::to_string(v.dim(1)) + " " + std::to_string(v.dim(0)) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto [lo, hi] = std::minmax_element(v.values().begin(), v.values().end());
  const double mn = *lo, range = *hi - *lo;
  for (double x : v.values()) {
    const double scaled = range > 0.0 ? (x - mn) / range * 255.0 : 0.0;
    out.push_back(static_cast<std::uint8_t>(std::clamp(std::lround(scaled), 0L, 255L)));
  }
  return out;
}

std::string csv_text(const SaliencyMap& map) {
  const Tensor& v = map.values;
  if (v.rank() != 2) throw ShapeError("csv_text: expected a rank-2 map, got " + to_string(v.dims()));
  std::string out;
  char buf[32];
  for (std::size_t i = 0; i < v.dim(0); ++i) {
    for (std::size_t j = 0; j < v.dim(1); ++j) {
      if (j) out += ',';
      const auto res = std::to_chars(buf, buf + sizeof buf, v.at(i, j));
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

std::string map_file_stem(const SaliencyMap& map, std::size_t image_index) {
  return map.method + "_" + std::to_string(image_index) + "_" + std::to_string(map.class_u);
}

void write_pgm(const std::filesystem::path& path, const SaliencyMap& map) {
  detail::write_file(path, pgm_bytes(map));
}

void write_csv(const std::filesystem::path& path, const SaliencyMap& map) {
  const std::string text = csv_text(map);
  detail::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace caselab
