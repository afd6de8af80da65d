#include "cli/stubs.hpp"

#include <array>
#include <cstring>

#include "caselab/random.hpp"

namespace caselab::cli {
namespace {

constexpr std::array<std::string_view, 3> kStubs{"_constant", "_disjoint", "_random"};

// FNV-1a over the pixel bytes: the noise must depend on the image itself,
// not on the order in which worker threads visit images.
std::uint64_t pixel_hash(const Tensor& pixels) {
  std::uint64_t h = 1469598103934665603ull;
  for (double v : pixels.values()) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace

bool is_stub_method(std::string_view name) {
  for (auto s : kStubs) {
    if (s == name) return true;
  }
  return false;
}

std::optional<SaliencyFn> stub_method(std::string_view name, std::uint64_t seed) {
  const std::string label(name);
  if (name == "_constant") {
    return SaliencyFn([label](const ModelBundle&, const Tensor&, ClassIndex u) {
      return SaliencyMap{Tensor({kImageSide, kImageSide}, 1.0), label, u, 1};
    });
  }
  if (name == "_disjoint") {
    return SaliencyFn([label](const ModelBundle&, const Tensor&, ClassIndex u) {
      Tensor t({kImageSide, kImageSide});
      for (std::size_t r = 4 * u; r < 4 * u + 4 && r < kImageSide; ++r) {
        for (std::size_t c = 0; c < kImageSide; ++c) t.at(r, c) = 1.0;
      }
      return SaliencyMap{std::move(t), label, u, 1};
    });
  }
  if (name == "_random") {
    return SaliencyFn([label, seed](const ModelBundle&, const Tensor& pixels, ClassIndex u) {
      Rng rng(mix_seed(seed ^ pixel_hash(pixels) ^ mix_seed(u + 1)));
      Tensor t({kImageSide, kImageSide});
      for (double& v : t.values()) v = rng.uniform();
      return SaliencyMap{std::move(t), label, u, 1};
    });
  }
  return std::nullopt;
}

}  // namespace caselab::cli
