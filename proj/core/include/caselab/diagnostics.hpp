#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "caselab/dataset.hpp"
#include "caselab/model.hpp"
#include "caselab/saliency.hpp"
#include "caselab/statistics.hpp"

namespace caselab {

inline constexpr double kDefaultTopFraction = 0.05;
inline constexpr double kDefaultAgreementThreshold = 0.5;
inline constexpr double kDefaultActivityTau = 0.001;

/// ceil(fraction * n), with fraction in (0, 1].
std::size_t top_k_count(std::size_t n, double fraction);

/// Indices of the ceil(fraction * size) largest values, ordered by
/// descending value with ties going to the lower (row-major) index. The
/// ranking is a total order, so a smaller fraction always yields a prefix.
std::vector<std::size_t> top_k_indices(const Tensor& values, double fraction);
std::vector<std::size_t> top_k_indices(const SaliencyMap& map, double fraction);

/// |top_k(e) intersect top_k(e2)| / k.
double feature_agreement(const SaliencyMap& e, const SaliencyMap& e2, double fraction);

/// An image paired with a stable identifier; experiments key their output
/// by `index` so results do not depend on input order.
struct IndexedImage {
  std::size_t index = 0;
  LabeledImage image;
};

std::vector<IndexedImage> index_images(const std::vector<LabeledImage>& images);

/// Highest and second-highest scoring classes (ties to the lower index).
std::pair<ClassIndex, ClassIndex> top_two(const Tensor& scores);

// ---------------------------------------------------------------------------
// Class sensitivity

struct AgreementSample {
  std::size_t image_index = 0;
  ClassIndex top1_class = 0;
  ClassIndex top2_class = 0;
  double agreement = 0.0;
};

struct Rq1Result {
  std::vector<AgreementSample> samples;  // sorted by image_index
  StatTestResult test;
};

/// For every correctly classified image, compares the maps for the top-1
/// and top-2 predicted classes and tests whether the median agreement is
/// below `threshold`. Throws std::invalid_argument when no image is
/// classified correctly.
Rq1Result rq1_experiment(const ModelBundle& model, const SaliencyFn& method,
                         std::span<const IndexedImage> images,
                         double fraction = kDefaultTopFraction,
                         double threshold = kDefaultAgreementThreshold, std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Fidelity

struct FidelityRecord {
  std::size_t image_index = 0;
  std::string method;
  ClassIndex predicted = 0;
  double confidence_before = 0.0;
  double confidence_after = 0.0;
  double drop = 0.0;  // confidence_before - confidence_after
};

/// Replaces the top `fraction` most salient pixels with `fill_value` and
/// reports the change in softmax confidence of the pre-ablation argmax.
FidelityRecord ablate_and_drop(const ModelBundle& model, const Tensor& pixels, const SaliencyMap& map,
                               double fraction, double fill_value);

struct NamedMethod {
  std::string name;
  SaliencyFn fn;
};

struct Rq2Row {
  std::string method;
  std::size_t n = 0;
  double mean_drop = 0.0;
  double sd_drop = 0.0;
  /// Paired test of CASE drops against this method's (H1: CASE larger).
  /// Empty when there is no "case" method or the pairing is degenerate.
  std::optional<StatTestResult> vs_case;
  std::string note;
};

struct Rq2Result {
  std::vector<FidelityRecord> drops;  // sorted by (image_index, method order)
  std::vector<Rq2Row> rows;           // one per method, input order
};

/// Confidence drops for each method on the correctly classified images,
/// maps computed for the predicted class.
Rq2Result rq2_experiment(const ModelBundle& model, std::span<const NamedMethod> methods,
                         std::span<const IndexedImage> images, double fraction, double fill_value,
                         std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Channel activity

struct ChannelActivity {
  Tensor means;  // [N] spatial mean per channel
  std::size_t active = 0;  // channels with mean > tau
};

ChannelActivity channel_activity(const Tensor& activation, double tau);

struct SparsityRecord {
  std::size_t image_index = 0;
  ClassIndex label = 0;
  std::size_t active_channels = 0;
};

struct SparsityResult {
  std::vector<SparsityRecord> per_image;  // correctly classified images, by index
  std::vector<std::optional<double>> per_class_mean;  // nullopt: no correct predictions
};

SparsityResult sparsity_experiment(const ModelBundle& model, std::span<const IndexedImage> images,
                                   double tau = kDefaultActivityTau, std::size_t threads = 1);

/// Per-class mean of active channel counts.
std::vector<std::optional<double>> aggregate_sparsity(std::span<const SparsityRecord> records,
                                                      std::size_t class_count);

// ---------------------------------------------------------------------------
// Histogram

struct HistogramBin {
  double lower = 0.0;
  std::size_t count = 0;
};

/// Fixed-width bins over [0, 1]; bins are [lower, lower + width) except the
/// last, which also includes 1.0.
std::vector<HistogramBin> histogram(std::span<const double> samples, double bin_width = 0.05);

}  // namespace caselab
