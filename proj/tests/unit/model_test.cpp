#include <gtest/gtest.h>

#include <filesystem>

#include "caselab/errors.hpp"
#include "caselab/model.hpp"
#include "test_support.hpp"

namespace caselab {
namespace {

using testing::max_rel_error;
using testing::perturbed_model;
using testing::random_tensor;
using testing::sample_images;

TEST(Model, ShippedArchitectureShapes) {
  const ModelBundle m = make_model(1);
  EXPECT_NO_THROW(validate_model(m));
  EXPECT_EQ(m.activation_shape(), (Shape{32, 8, 8}));
  EXPECT_EQ(m.output_shape(m.layers.size() - 1), (Shape{8}));
  const auto named = m.named_weights();
  ASSERT_EQ(named.size(), 8u);
  EXPECT_EQ(named.front().first, "conv1.weight");
  EXPECT_EQ(named.back().first, "fc.bias");
}

TEST(Model, InitIsSeededAndBiasesZero) {
  EXPECT_EQ(make_model(3), make_model(3));
  EXPECT_NE(make_model(3), make_model(4));
  const ModelBundle m = make_model(3);
  for (const auto& [name, t] : m.named_weights()) {
    if (name.ends_with(".bias")) {
      for (double v : t->values()) EXPECT_EQ(v, 0.0);
    }
  }
}

TEST(Model, AttributionLayerOverride) {
  const ModelBundle m = with_attribution_layer(make_model(1), 4);
  EXPECT_EQ(m.activation_shape(), (Shape{32, 16, 16}));
  // Dense output is rank 1, not an activation map.
  EXPECT_THROW(with_attribution_layer(make_model(1), 9), std::invalid_argument);
  EXPECT_THROW(with_attribution_layer(make_model(1), 42), std::invalid_argument);
}

TEST(Model, PredictIsADistribution) {
  const ModelBundle m = perturbed_model(2);
  for (const Tensor& x : {Tensor({1, 32, 32}), sample_images(1)[3].pixels}) {
    const Tensor p = predict(m, x);
    double s = 0;
    for (double v : p.values()) {
      EXPECT_TRUE(std::isfinite(v));
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_THROW(predict(m, Tensor({1, 16, 16})), ShapeError);
}

TEST(Model, CaptureRecomposesLogits) {
  const ModelBundle m = perturbed_model(3);
  const Tensor x = sample_images(1)[5].pixels;
  const Capture cap = forward_with_capture(m, x);
  EXPECT_EQ(cap.activation.dims(), m.activation_shape());
  for (double v : cap.activation.values()) EXPECT_GE(v, 0.0);
  EXPECT_EQ(cap.logits, logits(m, x));
  EXPECT_EQ(head_logits(m, cap.activation), cap.logits);

  Tensor y = x;
  for (std::size_t i = 0; i < m.layers.size(); ++i) y = layer_forward(m.layers[i], m.layer_params(i), y);
  EXPECT_EQ(y, cap.logits);
}

TEST(Model, ActivationGradientMatchesFiniteDifferences) {
  const ModelBundle m = perturbed_model(4);
  const auto images = sample_images(1);
  Rng pick(77);
  for (std::size_t img = 0; img < 3; ++img) {
    const Capture cap = forward_with_capture(m, images[img].pixels);
    for (ClassIndex u = 0; u < m.class_count; ++u) {
      const Tensor g = grad_wrt_activation(m, images[img].pixels, u);
      ASSERT_EQ(g.dims(), cap.activation.dims());
      for (int s = 0; s < 64; ++s) {
        const std::size_t i = pick.below(g.size());
        Tensor ap = cap.activation, am = cap.activation;
        ap[i] += 1e-6;
        am[i] -= 1e-6;
        const double fd = (head_logits(m, ap)[u] - head_logits(m, am)[u]) / 2e-6;
        EXPECT_NEAR(g[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(Model, GradientAtLowerAttributionLayer) {
  // With A taken before conv3, the head contains conv, relu, pooling and
  // dense, so this exercises the full VJP chain.
  const ModelBundle m = with_attribution_layer(perturbed_model(5), 5);
  const Tensor x = sample_images(1)[2].pixels;
  const Capture cap = forward_with_capture(m, x);
  const auto grads = head_gradients(m, cap.activation, std::vector<ClassIndex>{1, 6});
  Rng pick(78);
  for (std::size_t k = 0; k < 2; ++k) {
    const ClassIndex u = k == 0 ? 1 : 6;
    EXPECT_EQ(grads[k], grad_wrt_activation(m, x, u));
    for (int s = 0; s < 64; ++s) {
      const std::size_t i = pick.below(cap.activation.size());
      Tensor ap = cap.activation, am = cap.activation;
      ap[i] += 1e-6;
      am[i] -= 1e-6;
      const double fd = (head_logits(m, ap)[u] - head_logits(m, am)[u]) / 2e-6;
      EXPECT_NEAR(grads[k][i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Model, ZeroHeadGivesZeroGradient) {
  ModelBundle m = perturbed_model(6);
  for (auto& p : m.params.back()) std::fill(p.values().begin(), p.values().end(), 0.0);
  const Tensor g = grad_wrt_activation(m, sample_images(1)[0].pixels, 3);
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(Model, ClassOutOfRange) {
  const ModelBundle m = make_model(1);
  EXPECT_THROW(grad_wrt_activation(m, Tensor({1, 32, 32}), 8), std::out_of_range);
}

TEST(Argmax, TiesToLowerIndex) {
  EXPECT_EQ(argmax(Tensor::from_values({4}, {1, 3, 3, 2})), 1u);
}

TEST(ConfusionMatrix, ConservesImages) {
  const ModelBundle m = perturbed_model(7);
  const auto images = sample_images(3);
  const ConfusionMatrix cm = confusion_matrix(m, images);
  EXPECT_EQ(cm.total(), images.size());
  for (ClassIndex u = 0; u < 8; ++u) EXPECT_EQ(cm.row_sum(u), 3u);
  std::uint64_t diag = 0;
  for (ClassIndex u = 0; u < 8; ++u) diag += cm.at(u, u);
  EXPECT_DOUBLE_EQ(static_cast<double>(diag) / 24.0, accuracy(m, images));
  EXPECT_THROW(confusion_matrix(m, {}), std::invalid_argument);
}

TEST(Train, ZeroEpochsReturnsInitialisation) {
  DatasetSplit data = split(sample_images(2), {}, 1);
  const auto r = train(data, {0, 0.05, 9, 32});
  EXPECT_EQ(r.model, make_model(9));
  EXPECT_TRUE(r.history.empty());
}

TEST(Train, DeterministicAndLearns) {
  DatasetSplit data = split(generate(3, 12), {0.5, 0.25, 0.25}, 1);
  const auto a = train(data, {4, 0.05, 2, 8});
  const auto b = train(data, {4, 0.05, 2, 8});
  EXPECT_EQ(a.model, b.model);
  ASSERT_EQ(a.history.size(), 4u);
  EXPECT_LT(a.history.back().loss, a.history.front().loss);
  EXPECT_NE(a.model, train(data, {4, 0.05, 3, 8}).model);
}

TEST(Train, RejectsEmptyTrainingSplit) {
  EXPECT_THROW(train(DatasetSplit{}, {}), std::invalid_argument);
}

TEST(Train, DivergenceIsANumericalError) {
  DatasetSplit data = split(generate(3, 4), {}, 1);
  EXPECT_THROW(train(data, {3, 1e300, 1, 4}), NumericalError);
}

// ---------------------------------------------------------------------------

TEST(Weights, RoundTripIsBitExact) {
  const ModelBundle m = perturbed_model(8);
  EXPECT_EQ(decode_weights(encode_weights(m)), m);
  const auto path = std::filesystem::temp_directory_path() / "caselab_weights_test.bin";
  save_weights(m, path);
  EXPECT_EQ(load_weights(path), m);
  std::filesystem::remove(path);
}

TEST(Weights, CorruptionIsStructured) {
  const auto bytes = encode_weights(make_model(1));
  auto bad = bytes;
  bad[1] = 'Z';
  EXPECT_THROW(decode_weights(bad), ParseError);
  for (std::size_t n : {0ul, 6ul, 9ul, 14ul, 40ul, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(n));
    EXPECT_THROW(decode_weights(cut), ParseError) << n;
  }
  auto extra = bytes;
  extra.push_back(1);
  EXPECT_THROW(decode_weights(extra), ParseError);
}

TEST(Weights, WrongShapeIsRejected) {
  auto bytes = encode_weights(make_model(1));
  // First tensor: magic(7) version(4) count(4) name_len(2) "conv1.weight"(12)
  // rank(1) then dims; bump the leading dim.
  const std::size_t dim0 = 7 + 4 + 4 + 2 + 12 + 1;
  ASSERT_EQ(bytes[dim0], 16);
  bytes[dim0] = 15;
  EXPECT_THROW(decode_weights(bytes), ParseError);
}

}  // namespace
}  // namespace caselab
