#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "caselab/saliency.hpp"

namespace caselab::cli {

// Hidden methods used to check the experiment plumbing. They never appear
// in help text or in "all".
//   _constant  the same all-ones map for every class
//   _disjoint  class u lights rows 4u..4u+3 only, so maps never overlap
//   _random    uniform noise keyed by (seed, pixels, class)
bool is_stub_method(std::string_view name);
std::optional<SaliencyFn> stub_method(std::string_view name, std::uint64_t seed);

}  // namespace caselab::cli
