#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "caselab/dataset.hpp"
#include "caselab/layers.hpp"
#include "caselab/tensor.hpp"

namespace caselab {

/// A layer stack with its parameters and the layer whose output is used as
/// the activation tensor A by the saliency methods.
///
/// The shipped architecture is
///   conv3x3(1->16) relu maxpool | conv3x3(16->32) relu maxpool |
///   conv3x3(32->32) relu | global_avg_pool | dense(32->8)
/// with A taken after the last relu (32 x 8 x 8). Logits are pre-softmax.
struct ModelBundle {
  std::vector<LayerSpec> layers;
  std::vector<std::vector<Tensor>> params;  // params[i] belongs to layers[i]
  std::size_t attribution_layer = 0;
  std::size_t class_count = kClassCount;
  Shape input_shape{1, kImageSide, kImageSide};

  std::span<const Tensor> layer_params(std::size_t i) const { return params.at(i); }

  /// Output shape of layer `i` for `input_shape`.
  Shape output_shape(std::size_t i) const;
  Shape activation_shape() const { return output_shape(attribution_layer); }

  /// "<layer>.weight" / "<layer>.bias" pairs in layer order.
  std::vector<std::pair<std::string, const Tensor*>> named_weights() const;

  friend bool operator==(const ModelBundle&, const ModelBundle&) = default;
};

/// Index of the last relu in the shipped stack.
inline constexpr std::size_t kDefaultAttributionLayer = 7;

/// Shipped architecture, He-uniform weights from `seed`, zero biases.
ModelBundle make_model(std::uint64_t seed);

/// Checks layer/param consistency and that the attribution layer yields a
/// rank-3 tensor; throws std::invalid_argument otherwise.
void validate_model(const ModelBundle& model);

/// Copy of `model` with a different attribution layer (validated).
ModelBundle with_attribution_layer(ModelBundle model, std::size_t layer);

struct TrainOptions {
  std::size_t epochs = 30;
  double learning_rate = 0.05;
  std::uint64_t seed = 1;
  std::size_t batch_size = 32;
};

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;            // mean cross-entropy over the epoch
  double train_accuracy = 0.0;  // running accuracy during the epoch
  double val_accuracy = 0.0;    // after the epoch; 0 when there is no validation split
};

struct TrainingResult {
  ModelBundle model;
  std::vector<EpochStats> history;
};

/// Plain mini-batch SGD on softmax cross-entropy. Initialisation and the
/// per-epoch shuffle derive from `options.seed`; single-threaded, so the
/// result is bit-reproducible.
TrainingResult train(const DatasetSplit& data, const TrainOptions& options);

Tensor logits(const ModelBundle& model, const Tensor& pixels);
Tensor predict(const ModelBundle& model, const Tensor& pixels);

struct Capture {
  Tensor logits;
  Tensor activation;  // output of the attribution layer
};

Capture forward_with_capture(const ModelBundle& model, const Tensor& pixels);

/// Runs the layers above the attribution layer on an activation tensor.
Tensor head_logits(const ModelBundle& model, const Tensor& activation);

/// d logit_u / d activation, one tensor per requested class, sharing one
/// head forward pass.
std::vector<Tensor> head_gradients(const ModelBundle& model, const Tensor& activation,
                                   std::span<const ClassIndex> classes);

/// gamma_u: gradient of the pre-softmax logit u with respect to A, with the
/// input held fixed.
Tensor grad_wrt_activation(const ModelBundle& model, const Tensor& pixels, ClassIndex u);

ClassIndex argmax(const Tensor& scores);

double accuracy(const ModelBundle& model, const std::vector<LabeledImage>& images);

/// counts[u][v] = images with true class u predicted as v.
struct ConfusionMatrix {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;  // row-major classes x classes

  explicit ConfusionMatrix(std::size_t n = 0) : classes(n), counts(n * n, 0) {}

  std::uint64_t& at(ClassIndex u, ClassIndex v) { return counts.at(u * classes + v); }
  std::uint64_t at(ClassIndex u, ClassIndex v) const { return counts.at(u * classes + v); }
  std::uint64_t row_sum(ClassIndex u) const;
  std::uint64_t total() const;

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

ConfusionMatrix confusion_matrix(const ModelBundle& model, const std::vector<LabeledImage>& images);

// "CASEW1\0" weights file: magic, u32 version (1), u32 tensor count, then per
// tensor u16 name length, UTF-8 name, u8 rank, u32 dims, float64 values, all
// little-endian. Loading rebuilds the shipped architecture and fills it by name.
std::vector<std::uint8_t> encode_weights(const ModelBundle& model);
ModelBundle decode_weights(std::span<const std::uint8_t> bytes);
void save_weights(const ModelBundle& model, const std::filesystem::path& path);
ModelBundle load_weights(const std::filesystem::path& path);

}  // namespace caselab
