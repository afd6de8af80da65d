#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "caselab/saliency.hpp"

namespace caselab::cli {

/// Bad flag or option value; maps to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Unreadable or malformed config file; maps to exit code 3.
class ConfigFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class AblationFill { kMean, kZero };

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t per_class = 200;
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  std::size_t k_contrast = 3;
  std::size_t beta = 4;
  double fraction = 0.05;
  double tau = 0.001;
  std::vector<std::string> methods{"gradcam", "gradcampp", "scorecam", "ablationcam", "layercam", "case"};
  std::optional<std::size_t> attribution_layer;
  CaseWeighting case_weighting = CaseWeighting::kPooled;
  AblationFill ablation_fill = AblationFill::kMean;
  std::filesystem::path output_dir = ".";
  std::size_t threads = 1;
  bool timestamp = true;
  // Inputs. Without `data` the dataset is regenerated from seed/per_class;
  // without `weights` commands read <output_dir>/weights.bin.
  std::optional<std::filesystem::path> weights;
  std::optional<std::filesystem::path> data;

  std::filesystem::path weights_path() const { return weights ? *weights : output_dir / "weights.bin"; }
};

/// Parses and stores one value. Throws UsageError naming the key on an
/// unknown key or a malformed value.
void set_value(RunConfig& config, std::string_view key, std::string_view value);

/// Applies `key = value` lines; `#` starts a comment, blank lines are
/// ignored. Errors carry the line number and throw ConfigFileError.
void apply_config_text(RunConfig& config, std::string_view text, std::string_view origin = "config");
void apply_config_file(RunConfig& config, const std::filesystem::path& path);

/// The keys that affect computed results, in config-file syntax. Paths and
/// the thread count are left out.
std::string render_config(const RunConfig& config);

/// "all" expands to the six public methods; names are comma separated.
std::vector<std::string> parse_method_list(std::string_view text);

std::string_view fill_name(AblationFill f);

/// Shortest decimal form that reads back to the same double.
std::string format_real(double v);

}  // namespace caselab::cli
