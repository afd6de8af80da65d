#pragma once

#include <cstddef>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "cli/run_config.hpp"

namespace caselab::cli {

// Every command writes its files into config.output_dir (created on demand)
// and a short human-readable summary to `out`. Files are written only after
// all computation has finished.

/// Prints per-class counts; writes the binary container when `export_path`
/// is set.
void cmd_gen_data(const RunConfig& config, const std::optional<std::filesystem::path>& export_path,
                  std::ostream& out);

/// weights (config.weights_path()), history.csv, train_report.json.
void cmd_train(const RunConfig& config, std::ostream& out);

struct SaliencyRequest {
  std::size_t image_index = 0;  // position in the test split
  std::string class_spec = "top1";  // top1 | top2 | top2pair | class index
};

/// One PGM and one CSV per (method, class).
void cmd_saliency(const RunConfig& config, const SaliencyRequest& request, std::ostream& out);

/// rq1_{method}.csv, agreement_hist_{method}.csv, rq1_summary.csv, rq1_report.json.
void cmd_rq1(const RunConfig& config, std::ostream& out);

/// rq2_drops.csv, rq2_summary.csv, rq2_report.json.
void cmd_rq2(const RunConfig& config, std::ostream& out);

/// sparsity.csv, sparsity_per_image.csv, sparsity_hist.csv, sparsity_report.json.
void cmd_sparsity(const RunConfig& config, std::ostream& out);

/// 2 usage, 3 I/O or parse, 4 numerical, 1 anything else.
int exit_code_for(const std::exception& e);

}  // namespace caselab::cli
