#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "caselab/model.hpp"
#include "caselab/tensor.hpp"

namespace caselab {

enum class Method { kGradCam, kGradCamPP, kScoreCam, kAblationCam, kLayerCam, kCase };

/// CLI identifiers: gradcam, gradcampp, scorecam, ablationcam, layercam, case.
std::string_view method_name(Method m);
std::optional<Method> parse_method(std::string_view name);
std::span<const Method> all_methods();

/// Non-negative heat map at input resolution.
struct SaliencyMap {
  Tensor values;  // [32 x 32]
  std::string method;
  ClassIndex class_u = 0;
  std::size_t beta = 1;
};

/// Maps (model, pixels, class) to a saliency map. Experiments take methods in
/// this form so that test stubs can stand in for real methods.
using SaliencyFn = std::function<SaliencyMap(const ModelBundle&, const Tensor&, ClassIndex)>;

// ---------------------------------------------------------------------------
// Contrastive saliency

/// Ordered contrast classes for a target class.
struct ContrastSet {
  std::vector<ClassIndex> classes;
};

/// The k classes v != u with the largest M[u, v], descending, ties to the
/// lower index. Requires 1 <= k <= C - 1.
ContrastSet contrast_set(const ConfusionMatrix& confusion, ClassIndex u, std::size_t k);

/// Mean of d s_v / dA over the contrast classes.
Tensor mean_contrast_gradient(const ModelBundle& model, const Tensor& pixels,
                              const ContrastSet& contrast);

/// gamma_u - <gamma_u, gamma_bar> / (|gamma_bar|^2 + epsilon) * gamma_bar,
/// inner product over all entries jointly.
Tensor orthogonal_projection(const Tensor& gamma_u, const Tensor& gamma_bar, double epsilon);

/// How the projected gradient is combined with A.
///   kPooled: per-channel spatial mean of gamma_perp as channel weights,
///            then a weighted sum of channels (Grad-CAM style).
///   kElementwise: sum over channels of gamma_perp * A, entry by entry.
enum class CaseWeighting { kPooled, kElementwise };

std::string_view weighting_name(CaseWeighting w);
std::optional<CaseWeighting> parse_weighting(std::string_view name);

struct CaseOptions {
  std::size_t k = 3;
  std::size_t beta = 4;
  double epsilon = 1e-8;
  CaseWeighting weighting = CaseWeighting::kPooled;
};

/// Intermediate quantities of one contrastive saliency evaluation.
struct CaseTrace {
  ContrastSet contrast;
  Tensor activation;
  Tensor gamma_u;
  Tensor gamma_bar;
  Tensor gamma_perp;
  Tensor raw;  // ReLU'd map before upsampling
};

SaliencyMap case_saliency(const ModelBundle& model, const Tensor& pixels, ClassIndex u,
                          const ConfusionMatrix& confusion, const CaseOptions& options,
                          CaseTrace* trace = nullptr);

// ---------------------------------------------------------------------------
// CAM baselines

SaliencyMap grad_cam(const ModelBundle& model, const Tensor& pixels, ClassIndex u, std::size_t beta);
SaliencyMap grad_cam_pp(const ModelBundle& model, const Tensor& pixels, ClassIndex u,
                        std::size_t beta);
/// Channel masks are min-max normalised activations upsampled to input
/// resolution; scores are s_u(pixels * mask) - s_u(zero image).
SaliencyMap score_cam(const ModelBundle& model, const Tensor& pixels, ClassIndex u, std::size_t beta);
/// Channel n weight is (s_u - s_u with channel n of A zeroed) / (|s_u| + 1e-8).
SaliencyMap ablation_cam(const ModelBundle& model, const Tensor& pixels, ClassIndex u,
                         std::size_t beta);
SaliencyMap layer_cam(const ModelBundle& model, const Tensor& pixels, ClassIndex u, std::size_t beta);

/// Dispatches to the method named by `m`. Only kCase uses `confusion`.
SaliencyMap compute_saliency(Method m, const ModelBundle& model, const Tensor& pixels, ClassIndex u,
                             const ConfusionMatrix& confusion, const CaseOptions& options);

SaliencyFn make_saliency_fn(Method m, ConfusionMatrix confusion, CaseOptions options);

// ---------------------------------------------------------------------------
// Building blocks on activation A [N x H x W] and gradient gamma [N x H x W].
// Maps returned here are [H x W] and not yet upsampled.

/// Per-channel spatial mean, shape [N].
Tensor channel_mean_weights(const Tensor& gamma);

/// sum_n weights[n] * A[n], shape [H x W], no ReLU.
Tensor weighted_channel_sum(const Tensor& activation, const Tensor& weights);

/// sum_n gamma[n] * A[n] entry by entry, shape [H x W], no ReLU.
Tensor elementwise_channel_sum(const Tensor& activation, const Tensor& gamma);

Tensor relu(Tensor t);

/// Grad-CAM++ channel weights: sum_ij alpha_ij * relu(g_ij) with
/// alpha_ij = g^2 / (2 g^2 + sum(A_n) g^3 + eps), alpha = 0 where g = 0.
Tensor grad_cam_pp_weights(const Tensor& activation, const Tensor& gamma, double epsilon = 1e-8);

/// ReLU(sum_n relu(gamma_n) * A_n), shape [H x W].
Tensor layer_cam_map(const Tensor& activation, const Tensor& gamma);

/// ReLU then bilinear upsampling; the result must have input resolution.
SaliencyMap finish_map(Tensor raw, std::size_t beta, std::string method, ClassIndex u);

// ---------------------------------------------------------------------------
// Discriminative feature sets

using FeatureMask = std::vector<bool>;

/// Entries with strictly positive gradient.
FeatureMask discriminative_set(const Tensor& gamma);

/// d_u minus the union of d_vs.
FeatureMask uniquely_discriminative_set(const FeatureMask& d_u, std::span<const FeatureMask> d_vs);

// ---------------------------------------------------------------------------
// Export

/// 8-bit binary PGM ("P5"), min-max normalised per map; a constant map
/// quantises to all zeros.
std::vector<std::uint8_t> pgm_bytes(const SaliencyMap& map);
/// One row per line, shortest round-trip decimal form.
std::string csv_text(const SaliencyMap& map);
/// "{method}_{image}_{class}" (no extension).
std::string map_file_stem(const SaliencyMap& map, std::size_t image_index);
void write_pgm(const std::filesystem::path& path, const SaliencyMap& map);
void write_csv(const std::filesystem::path& path, const SaliencyMap& map);

}  // namespace caselab
