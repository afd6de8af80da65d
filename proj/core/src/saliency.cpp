#include "caselab/saliency.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "caselab/errors.hpp"

namespace caselab {

namespace {

constexpr std::array<Method, 6> kAllMethods = {Method::kGradCam,     Method::kGradCamPP,
                                               Method::kScoreCam,    Method::kAblationCam,
                                               Method::kLayerCam,    Method::kCase};

constexpr double kAblationEpsilon = 1e-8;
constexpr double kGradCamPPEpsilon = 1e-8;

void require_rank3(const Tensor& t, const char* what) {
  if (t.rank() != 3) throw ShapeError(std::string(what) + ": expected [N x H x W], got " + to_string(t.dims()));
}

Tensor mean_of(std::span<const Tensor> grads) {
  if (grads.empty()) throw std::invalid_argument("mean_contrast_gradient: empty contrast set");
  Tensor acc(grads.front().dims());
  for (const auto& g : grads) {
    require_same_shape(acc, g, "mean_contrast_gradient");
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
  }
  const double k = static_cast<double>(grads.size());
  for (double& v : acc.values()) v /= k;
  return acc;
}

Tensor channel_plane(const Tensor& a, std::size_t n) {
  const std::size_t plane = a.dim(1) * a.dim(2);
  return Tensor({a.dim(1), a.dim(2)},
                std::vector<double>(a.data().begin() + static_cast<std::ptrdiff_t>(n * plane),
                                    a.data().begin() + static_cast<std::ptrdiff_t>((n + 1) * plane)));
}

Tensor class_gradient(const ModelBundle& model, const Tensor& activation, ClassIndex u) {
  const ClassIndex cls[] = {u};
  return std::move(head_gradients(model, activation, cls).front());
}

}  // namespace

std::string_view method_name(Method m) {
  switch (m) {
    case Method::kGradCam: return "gradcam";
    case Method::kGradCamPP: return "gradcampp";
    case Method::kScoreCam: return "scorecam";
    case Method::kAblationCam: return "ablationcam";
    case Method::kLayerCam: return "layercam";
    case Method::kCase: return "case";
  }
  throw std::logic_error("unknown method");
}

std::optional<Method> parse_method(std::string_view name) {
  for (Method m : kAllMethods) {
    if (method_name(m) == name) return m;
  }
  return std::nullopt;
}

std::span<const Method> all_methods() { return kAllMethods; }

std::string_view weighting_name(CaseWeighting w) {
  return w == CaseWeighting::kPooled ? "pooled" : "elementwise";
}

std::optional<CaseWeighting> parse_weighting(std::string_view name) {
  if (name == "pooled") return CaseWeighting::kPooled;
  if (name == "elementwise") return CaseWeighting::kElementwise;
  return std::nullopt;
}

ContrastSet contrast_set(const ConfusionMatrix& confusion, ClassIndex u, std::size_t k) {
  const std::size_t c = confusion.classes;
  if (u >= c) throw std::out_of_range("contrast_set: class " + std::to_string(u) + " out of range");
  if (k < 1 || k + 1 > c) {
    throw std::invalid_argument("contrast_set: k must lie in [1, " + std::to_string(c - 1) +
                                "], got " + std::to_string(k));
  }
  std::vector<ClassIndex> candidates;
  for (ClassIndex v = 0; v < c; ++v) {
    if (v != u) candidates.push_back(v);
  }
  std::stable_sort(candidates.begin(), candidates.end(), [&](ClassIndex a, ClassIndex b) {
    return confusion.at(u, a) > confusion.at(u, b);
  });
  candidates.resize(k);
  return {std::move(candidates)};
}

Tensor mean_contrast_gradient(const ModelBundle& model, const Tensor& pixels,
                              const ContrastSet& contrast) {
  if (contrast.classes.empty()) {
    throw std::invalid_argument("mean_contrast_gradient: empty contrast set");
  }
  const Capture cap = forward_with_capture(model, pixels);
  const auto grads = head_gradients(model, cap.activation, contrast.classes);
  return mean_of(grads);
}

Tensor orthogonal_projection(const Tensor& gamma_u, const Tensor& gamma_bar, double epsilon) {
  require_same_shape(gamma_u, gamma_bar, "orthogonal_projection");
  if (!(epsilon >= 0.0)) throw std::invalid_argument("orthogonal_projection: epsilon must be >= 0");
  const double denom = squared_norm(gamma_bar) + epsilon;
  const double numer = dot(gamma_u, gamma_bar);
  // denom == 0 only when gamma_bar == 0 and epsilon == 0; nothing to remove then.
  const double coef = denom > 0.0 ? numer / denom : 0.0;
  Tensor out = gamma_u;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= coef * gamma_bar[i];
  return out;
}

SaliencyMap case_saliency(const ModelBundle& model, const Tensor& pixels, ClassIndex u,
                          const ConfusionMatrix& confusion, const CaseOptions& options,
                          CaseTrace* trace) {
  if (confusion.classes != model.class_count) {
    throw std::invalid_argument("case_saliency: confusion matrix size does not match the model");
  }
  ContrastSet contrast = contrast_set(confusion, u, options.k);
  Capture cap = forward_with_capture(model, pixels);

  std::vector<ClassIndex> classes{u};
  classes.insert(classes.end(), contrast.classes.begin(), contrast.classes.end());
  auto grads = head_gradients(model, cap.activation, classes);
  Tensor gamma_u = std::move(grads.front());
  Tensor gamma_bar = mean_of(std::span<const Tensor>(grads).subspan(1));
  Tensor gamma_perp = orthogonal_projection(gamma_u, gamma_bar, options.epsilon);

  Tensor raw = options.weighting == CaseWeighting::kPooled
                   ? weighted_channel_sum(cap.activation, channel_mean_weights(gamma_perp))
                   : elementwise_channel_sum(cap.activation, gamma_perp);
  raw = relu(std::move(raw));
  SaliencyMap map = finish_map(raw, options.beta, "case", u);
  if (trace) {
    *trace = {std::move(contrast), std::move(cap.activation), std::move(gamma_u),
              std::move(gamma_bar), std::move(gamma_perp), std::move(raw)};
  }
  return map;
}

SaliencyMap grad_cam(const ModelBundle& model, const Tensor& pixels, ClassIndex u, std::size_t beta) {
  const Capture cap = forward_with_capture(model, pixels);
  const Tensor gamma = class_gradient(model, cap.activation, u);
  return finish_map(weighted_channel_sum(cap.activation, channel_mean_weights(gamma)), beta,
                    "gradcam", u);
}

SaliencyMap grad_cam_pp(const ModelBundle& model, const Tensor& pixels, ClassIndex u,
                        std::size_t beta) {
  const Capture cap = forward_with_capture(model, pixels);
  const Tensor gamma = class_gradient(model, cap.activation, u);
  return finish_map(
      weighted_channel_sum(cap.activation, grad_cam_pp_weights(cap.activation, gamma, kGradCamPPEpsilon)),
      beta, "gradcampp", u);
}

SaliencyMap score_cam(const ModelBundle& model, const Tensor& pixels, ClassIndex u, std::size_t beta) {
  if (u >= model.class_count) throw std::out_of_range("score_cam: class index out of range");
  const Capture cap = forward_with_capture(model, pixels);
  const Tensor& a = cap.activation;
  const double baseline = logits(model, Tensor(pixels.dims()))[u];

  const std::size_t n_channels = a.dim(0);
  Tensor scores({n_channels});
  for (std::size_t n = 0; n < n_channels; ++n) {
    Tensor plane = channel_plane(a, n);
    const auto [lo, hi] = std::minmax_element(plane.values().begin(), plane.values().end());
    const double mn = *lo, mx = *hi;
    if (mx > mn) {
      for (double& v : plane.values()) v = (v - mn) / (mx - mn);
    } else {
      std::fill(plane.values().begin(), plane.values().end(), 0.0);
    }
    const Tensor mask = bilinear_upsample(plane, beta);
    if (mask.size() * pixels.dim(0) != pixels.size()) {
      throw ShapeError("score_cam: upsampled mask " + to_string(mask.dims()) +
                       " does not match input " + to_string(pixels.dims()));
    }
    Tensor masked = pixels;
    for (std::size_t c = 0; c < pixels.dim(0); ++c) {
      for (std::size_t i = 0; i < mask.size(); ++i) masked[c * mask.size() + i] *= mask[i];
    }
    scores[n] = logits(model, masked)[u] - baseline;
  }
  const Tensor weights = softmax(scores);
  return finish_map(weighted_channel_sum(a, weights), beta, "scorecam", u);
}

SaliencyMap ablation_cam(const ModelBundle& model, const Tensor& pixels, ClassIndex u,
                         std::size_t beta) {
  if (u >= model.class_count) throw std::out_of_range("ablation_cam: class index out of range");
  const Capture cap = forward_with_capture(model, pixels);
  const Tensor& a = cap.activation;
  const double score = head_logits(model, a)[u];
  const std::size_t n_channels = a.dim(0);
  const std::size_t plane = a.dim(1) * a.dim(2);
  Tensor weights({n_channels});
  for (std::size_t n = 0; n < n_channels; ++n) {
    Tensor ablated = a;
    std::fill(&ablated[n * plane], &ablated[n * plane] + plane, 0.0);
    const double ablated_score = head_logits(model, ablated)[u];
    weights[n] = (score - ablated_score) / (std::abs(score) + kAblationEpsilon);
  }
  return finish_map(weighted_channel_sum(a, weights), beta, "ablationcam", u);
}

SaliencyMap layer_cam(const ModelBundle& model, const Tensor& pixels, ClassIndex u, std::size_t beta) {
  const Capture cap = forward_with_capture(model, pixels);
  const Tensor gamma = class_gradient(model, cap.activation, u);
  return finish_map(layer_cam_map(cap.activation, gamma), beta, "layercam", u);
}

SaliencyMap compute_saliency(Method m, const ModelBundle& model, const Tensor& pixels, ClassIndex u,
                             const ConfusionMatrix& confusion, const CaseOptions& options) {
  switch (m) {
    case Method::kGradCam: return grad_cam(model, pixels, u, options.beta);
    case Method::kGradCamPP: return grad_cam_pp(model, pixels, u, options.beta);
    case Method::kScoreCam: return score_cam(model, pixels, u, options.beta);
    case Method::kAblationCam: return ablation_cam(model, pixels, u, options.beta);
    case Method::kLayerCam: return layer_cam(model, pixels, u, options.beta);
    case Method::kCase: return case_saliency(model, pixels, u, confusion, options);
  }
  throw std::logic_error("unknown method");
}

SaliencyFn make_saliency_fn(Method m, ConfusionMatrix confusion, CaseOptions options) {
  return [m, confusion = std::move(confusion), options](const ModelBundle& model,
                                                        const Tensor& pixels, ClassIndex u) {
    return compute_saliency(m, model, pixels, u, confusion, options);
  };
}

Tensor channel_mean_weights(const Tensor& gamma) {
  require_rank3(gamma, "channel_mean_weights");
  const std::size_t plane = gamma.dim(1) * gamma.dim(2);
  Tensor w({gamma.dim(0)});
  for (std::size_t n = 0; n < gamma.dim(0); ++n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += gamma[n * plane + i];
    w[n] = acc / static_cast<double>(plane);
  }
  return w;
}

Tensor weighted_channel_sum(const Tensor& activation, const Tensor& weights) {
  require_rank3(activation, "weighted_channel_sum");
  if (weights.dims() != Shape{activation.dim(0)}) {
    throw ShapeError("weighted_channel_sum: weights " + to_string(weights.dims()) +
                     " do not match activation " + to_string(activation.dims()));
  }
  const std::size_t plane = activation.dim(1) * activation.dim(2);
  Tensor out({activation.dim(1), activation.dim(2)});
  for (std::size_t n = 0; n < activation.dim(0); ++n) {
    const double w = weights[n];
    for (std::size_t i = 0; i < plane; ++i) out[i] += w * activation[n * plane + i];
  }
  return out;
}

Tensor elementwise_channel_sum(const Tensor& activation, const Tensor& gamma) {
  require_rank3(activation, "elementwise_channel_sum");
  require_same_shape(activation, gamma, "elementwise_channel_sum");
  const std::size_t plane = activation.dim(1) * activation.dim(2);
  Tensor out({activation.dim(1), activation.dim(2)});
  for (std::size_t n = 0; n < activation.dim(0); ++n) {
    for (std::size_t i = 0; i < plane; ++i) out[i] += gamma[n * plane + i] * activation[n * plane + i];
  }
  return out;
}

Tensor relu(Tensor t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
  return t;
}

Tensor grad_cam_pp_weights(const Tensor& activation, const Tensor& gamma, double epsilon) {
  require_rank3(activation, "grad_cam_pp_weights");
  require_same_shape(activation, gamma, "grad_cam_pp_weights");
  const std::size_t plane = activation.dim(1) * activation.dim(2);
  Tensor w({activation.dim(0)});
  for (std::size_t n = 0; n < activation.dim(0); ++n) {
    double sum_a = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum_a += activation[n * plane + i];
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double g = gamma[n * plane + i];
      if (g == 0.0) continue;
      const double g2 = g * g;
      const double alpha = g2 / (2.0 * g2 + sum_a * g2 * g + epsilon);
      acc += alpha * (g > 0.0 ? g : 0.0);
    }
    w[n] = acc;
  }
  return w;
}

Tensor layer_cam_map(const Tensor& activation, const Tensor& gamma) {
  require_rank3(activation, "layer_cam_map");
  require_same_shape(activation, gamma, "layer_cam_map");
  return relu(elementwise_channel_sum(activation, relu(gamma)));
}

SaliencyMap finish_map(Tensor raw, std::size_t beta, std::string method, ClassIndex u) {
  if (raw.rank() != 2) throw ShapeError("finish_map: expected a rank-2 map, got " + to_string(raw.dims()));
  Tensor up = bilinear_upsample(relu(std::move(raw)), beta);
  if (up.dims() != Shape{kImageSide, kImageSide}) {
    throw ShapeError("saliency map " + to_string(up.dims()) + " after upsampling by " +
                     std::to_string(beta) + " does not match the input resolution");
  }
  require_finite(up, "saliency map");
  return {std::move(up), std::move(method), u, beta};
}

FeatureMask discriminative_set(const Tensor& gamma) {
  FeatureMask mask(gamma.size());
  for (std::size_t i = 0; i < gamma.size(); ++i) mask[i] = gamma[i] > 0.0;
  return mask;
}

FeatureMask uniquely_discriminative_set(const FeatureMask& d_u, std::span<const FeatureMask> d_vs) {
  FeatureMask out = d_u;
  for (const auto& d_v : d_vs) {
    if (d_v.size() != d_u.size()) {
      throw ShapeError("uniquely_discriminative_set: mask size " + std::to_string(d_v.size()) +
                       " vs " + std::to_string(d_u.size()));
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] && !d_v[i];
  }
  return out;
}

}  // namespace caselab
