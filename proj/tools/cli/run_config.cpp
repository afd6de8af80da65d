#include "cli/run_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cli/stubs.hpp"

namespace caselab::cli {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <class T>
T parse_number(std::string_view key, std::string_view value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw UsageError("invalid value '" + std::string(value) + "' for " + std::string(key));
  }
  return out;
}

double parse_real(std::string_view key, std::string_view value, double lo, double hi, bool open_lo) {
  const double v = parse_number<double>(key, value);
  if (!(open_lo ? v > lo : v >= lo) || !(v <= hi)) {
    throw UsageError(std::string(key) + " out of range: " + std::string(value));
  }
  return v;
}

std::string valid_method_list() {
  std::string out;
  for (Method m : all_methods()) {
    if (!out.empty()) out += ", ";
    out += method_name(m);
  }
  return out;
}

}  // namespace

std::string format_real(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string_view fill_name(AblationFill f) { return f == AblationFill::kMean ? "mean" : "zero"; }

std::vector<std::string> parse_method_list(std::string_view text) {
  std::vector<std::string> out;
  if (trim(text) == "all") {
    for (Method m : all_methods()) out.emplace_back(method_name(m));
    return out;
  }
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = std::min(text.find(',', pos), text.size());
    const auto name = trim(text.substr(pos, comma - pos));
    if (name.empty()) throw UsageError("empty method name; valid methods: " + valid_method_list());
    if (!parse_method(name) && !is_stub_method(name)) {
      throw UsageError("unknown method '" + std::string(name) + "'; valid methods: " + valid_method_list());
    }
    for (const auto& seen : out) {
      if (seen == name) throw UsageError("method listed twice: " + std::string(name));
    }
    out.emplace_back(name);
    pos = comma + 1;
  }
  return out;
}

void set_value(RunConfig& c, std::string_view key, std::string_view raw) {
  const std::string_view value = trim(raw);
  if (key == "seed") {
    c.seed = parse_number<std::uint64_t>(key, value);
  } else if (key == "per_class") {
    c.per_class = parse_number<std::size_t>(key, value);
  } else if (key == "epochs") {
    c.epochs = parse_number<std::size_t>(key, value);
  } else if (key == "learning_rate") {
    c.learning_rate = parse_real(key, value, 0.0, 1e300, true);
  } else if (key == "k_contrast") {
    c.k_contrast = parse_number<std::size_t>(key, value);
    if (c.k_contrast < 1 || c.k_contrast >= kClassCount) {
      throw UsageError("k_contrast must be in [1, " + std::to_string(kClassCount - 1) + "]");
    }
  } else if (key == "beta") {
    c.beta = parse_number<std::size_t>(key, value);
    if (c.beta < 1) throw UsageError("beta must be positive");
  } else if (key == "fraction") {
    c.fraction = parse_real(key, value, 0.0, 1.0, true);
  } else if (key == "tau") {
    c.tau = parse_real(key, value, 0.0, 1e300, false);
  } else if (key == "methods") {
    c.methods = parse_method_list(value);
  } else if (key == "attribution_layer") {
    if (value == "default") {
      c.attribution_layer.reset();
    } else {
      c.attribution_layer = parse_number<std::size_t>(key, value);
    }
  } else if (key == "case_weighting") {
    const auto w = parse_weighting(value);
    if (!w) throw UsageError("case_weighting must be pooled or elementwise");
    c.case_weighting = *w;
  } else if (key == "ablation_fill") {
    if (value == "mean") {
      c.ablation_fill = AblationFill::kMean;
    } else if (value == "zero") {
      c.ablation_fill = AblationFill::kZero;
    } else {
      throw UsageError("ablation_fill must be mean or zero");
    }
  } else if (key == "output_dir") {
    c.output_dir = std::string(value);
  } else if (key == "threads") {
    c.threads = parse_number<std::size_t>(key, value);
    if (c.threads < 1) throw UsageError("threads must be at least 1");
  } else if (key == "weights") {
    c.weights = std::string(value);
  } else if (key == "data") {
    c.data = std::string(value);
  } else {
    throw UsageError("unknown config key '" + std::string(key) + "'");
  }
}

void apply_config_text(RunConfig& config, std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto eol = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, eol - pos);
    pos = eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (eq == std::string_view::npos) throw ConfigFileError(where + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    try {
      set_value(config, key, line.substr(eq + 1));
    } catch (const UsageError& e) {
      throw ConfigFileError(where + ": " + e.what());
    }
  }
}

void apply_config_file(RunConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigFileError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(config, ss.str(), path.string());
}

std::string render_config(const RunConfig& c) {
  std::ostringstream out;
  std::string methods;
  for (const auto& m : c.methods) methods += (methods.empty() ? "" : ",") + m;
  out << "seed = " << c.seed << "\n"
      << "per_class = " << c.per_class << "\n"
      << "epochs = " << c.epochs << "\n"
      << "learning_rate = " << format_real(c.learning_rate) << "\n"
      << "k_contrast = " << c.k_contrast << "\n"
      << "beta = " << c.beta << "\n"
      << "fraction = " << format_real(c.fraction) << "\n"
      << "tau = " << format_real(c.tau) << "\n"
      << "methods = " << methods << "\n"
      << "attribution_layer = "
      << (c.attribution_layer ? std::to_string(*c.attribution_layer) : std::string("default")) << "\n"
      << "case_weighting = " << weighting_name(c.case_weighting) << "\n"
      << "ablation_fill = " << fill_name(c.ablation_fill) << "\n";
  return out.str();
}

}  // namespace caselab::cli
