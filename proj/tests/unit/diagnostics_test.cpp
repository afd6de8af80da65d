#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "caselab/diagnostics.hpp"
#include "caselab/errors.hpp"
#include "test_support.hpp"

namespace caselab {
namespace {

using testing::perturbed_model;
using testing::random_tensor;

SaliencyMap map_of(Tensor values, std::string method = "stub") {
  return {std::move(values), std::move(method), 0, 4};
}

TEST(TopK, Counts) {
  EXPECT_EQ(top_k_count(1024, 0.05), 52u);
  EXPECT_EQ(top_k_count(1024, 0.25), 256u);
  EXPECT_EQ(top_k_count(1024, 1.0), 1024u);
  EXPECT_EQ(top_k_count(10, 0.01), 1u);
  EXPECT_THROW(top_k_count(1024, 0.0), std::invalid_argument);
  EXPECT_THROW(top_k_count(1024, 1.5), std::invalid_argument);
}

TEST(TopK, UniformMapTakesRowMajorPrefix) {
  const auto idx = top_k_indices(Tensor({32, 32}), 0.05);
  ASSERT_EQ(idx.size(), 52u);
  for (std::size_t i = 0; i < 52; ++i) EXPECT_EQ(idx[i], i);
}

TEST(TopK, OrdersByValueThenIndex) {
  const Tensor t = Tensor::from_values({2, 3}, {1, 5, 3, 5, 0, 3});
  EXPECT_EQ(top_k_indices(t, 0.5), (std::vector<std::size_t>{1, 3, 2}));
}

TEST(TopK, SmallerFractionIsPrefix) {
  const Tensor t = random_tensor({32, 32}, 4);
  const auto big = top_k_indices(t, 0.2);
  const auto small = top_k_indices(t, 0.05);
  EXPECT_TRUE(std::equal(small.begin(), small.end(), big.begin()));
}

TEST(Agreement, IdenticalDisjointAndPartial) {
  const Tensor t = random_tensor({32, 32}, 5);
  EXPECT_EQ(feature_agreement(map_of(t), map_of(t), 0.05), 1.0);

  Tensor a({32, 32}), b({32, 32});
  for (std::size_t i = 0; i < 52; ++i) {
    a[i] = 1.0;
    b[1023 - i] = 1.0;
  }
  EXPECT_EQ(feature_agreement(map_of(a), map_of(b), 0.05), 0.0);

  Tensor c({32, 32});
  for (std::size_t i = 26; i < 78; ++i) c[i] = 1.0;
  EXPECT_EQ(feature_agreement(map_of(a), map_of(c), 0.05), 0.5);
  EXPECT_THROW(feature_agreement(map_of(a), map_of(Tensor({16, 16})), 0.05), ShapeError);
}

TEST(Agreement, SymmetricAndBounded) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = map_of(random_tensor({32, 32}, 100 + s, 0, 1));
    const auto b = map_of(random_tensor({32, 32}, 200 + s, 0, 1));
    const double ab = feature_agreement(a, b, 0.05);
    EXPECT_EQ(ab, feature_agreement(b, a, 0.05));
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(TopTwo, TiesToLowerIndex) {
  EXPECT_EQ(top_two(Tensor::from_values({4}, {1, 3, 3, 0})), std::make_pair(ClassIndex{1}, ClassIndex{2}));
  EXPECT_EQ(top_two(Tensor::from_values({3}, {9, 1, 2})), std::make_pair(ClassIndex{0}, ClassIndex{2}));
  EXPECT_THROW(top_two(Tensor({1})), std::invalid_argument);
}

// ---------------------------------------------------------------------------

class Experiments : public ::testing::Test {
 protected:
  void SetUp() override {
    model = perturbed_model(21);
    // Relabel images with the model's own prediction so every image counts
    // as correctly classified.
    for (auto& img : generate(17, 3)) {
      img.label = argmax(logits(model, img.pixels));
      images.push_back(img);
    }
  }
  ModelBundle model;
  std::vector<LabeledImage> images;
};

SaliencyFn constant_stub() {
  return [](const ModelBundle&, const Tensor&, ClassIndex u) {
    return SaliencyMap{Tensor({32, 32}, 1.0), "_constant", u, 4};
  };
}

// Top-1 and top-2 maps light up opposite ends of the image.
SaliencyFn disjoint_stub() {
  return [](const ModelBundle& m, const Tensor& px, ClassIndex u) {
    Tensor t({32, 32});
    const bool first = u == argmax(logits(m, px));
    for (std::size_t i = 0; i < 52; ++i) t[first ? i : 1023 - i] = 1.0;
    return SaliencyMap{t, "_disjoint", u, 4};
  };
}

TEST_F(Experiments, ConstantStubNeverRejects) {
  const auto idx = index_images(images);
  const Rq1Result r = rq1_experiment(model, constant_stub(), idx);
  EXPECT_EQ(r.samples.size(), images.size());
  for (const auto& s : r.samples) EXPECT_EQ(s.agreement, 1.0);
  EXPECT_EQ(r.test.p_value, 1.0);
  EXPECT_FALSE(r.test.reject_at_05);
}

TEST_F(Experiments, DisjointStubGivesMinimalExactP) {
  images.resize(12);
  const auto idx = index_images(images);
  const Rq1Result r = rq1_experiment(model, disjoint_stub(), idx);
  ASSERT_LE(r.samples.size(), kWilcoxonExactMaxN);
  for (const auto& s : r.samples) EXPECT_EQ(s.agreement, 0.0);
  EXPECT_EQ(r.test.p_value, std::ldexp(1.0, -static_cast<int>(r.samples.size())));
  EXPECT_TRUE(r.test.exact);
}

TEST_F(Experiments, Rq1SkipsMisclassifiedImages) {
  auto wrong = images;
  wrong[0].label = (wrong[0].label + 1) % kClassCount;
  wrong[3].label = (wrong[3].label + 1) % kClassCount;
  const Rq1Result r = rq1_experiment(model, disjoint_stub(), index_images(wrong));
  EXPECT_EQ(r.samples.size(), images.size() - 2);
  for (const auto& s : r.samples) {
    EXPECT_NE(s.image_index, 0u);
    EXPECT_NE(s.image_index, 3u);
  }
}

TEST_F(Experiments, Rq1IndependentOfOrderAndThreads) {
  const SaliencyFn fn = [](const ModelBundle& m, const Tensor& px, ClassIndex u) {
    return grad_cam(m, px, u, 4);
  };
  auto idx = index_images(images);
  const Rq1Result a = rq1_experiment(model, fn, idx, 0.05, 0.5, 1);
  std::reverse(idx.begin(), idx.end());
  const Rq1Result b = rq1_experiment(model, fn, idx, 0.05, 0.5, 3);
  ASSERT_EQ(a.samples.size(), b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(a.samples[i].image_index, b.samples[i].image_index);
    EXPECT_EQ(a.samples[i].agreement, b.samples[i].agreement);
  }
  EXPECT_EQ(a.test.p_value, b.test.p_value);
}

TEST_F(Experiments, AblateAndDrop) {
  const Tensor& px = images[0].pixels;
  const FidelityRecord r = ablate_and_drop(model, px, map_of(random_tensor({32, 32}, 1, 0, 1)), 0.05, 0.3);
  const Tensor before = predict(model, px);
  EXPECT_EQ(r.predicted, argmax(before));
  EXPECT_EQ(r.confidence_before, before[r.predicted]);
  EXPECT_DOUBLE_EQ(r.drop, r.confidence_before - r.confidence_after);
  // Full ablation equals predicting on a constant image.
  const FidelityRecord all = ablate_and_drop(model, px, map_of(Tensor({32, 32})), 1.0, 0.3);
  EXPECT_EQ(all.confidence_after, predict(model, Tensor({1, 32, 32}, 0.3))[all.predicted]);
  EXPECT_THROW(ablate_and_drop(model, px, map_of(Tensor({8, 8})), 0.05, 0.3), ShapeError);
}

TEST_F(Experiments, Rq2PairsAgainstCase) {
  const auto idx = index_images(images);
  ConfusionMatrix m(8);
  std::vector<NamedMethod> methods{
      {"case", make_saliency_fn(Method::kCase, m, {})},
      {"gradcam", make_saliency_fn(Method::kGradCam, m, {})},
      {"_constant", constant_stub()}};
  const Rq2Result r = rq2_experiment(model, methods, idx, 0.05, 0.2, 2);
  ASSERT_EQ(r.rows.size(), 3u);
  EXPECT_EQ(r.drops.size(), 3 * images.size());
  EXPECT_EQ(r.rows[0].method, "case");
  EXPECT_FALSE(r.rows[0].vs_case.has_value());
  EXPECT_EQ(r.rows[0].note, "degenerate pairing: zero variance");
  EXPECT_TRUE(r.rows[2].vs_case.has_value());
  for (std::size_t i = 0; i + 1 < r.drops.size(); ++i) {
    EXPECT_LE(r.drops[i].image_index, r.drops[i + 1].image_index);
  }
  std::vector<double> case_drops, const_drops;
  for (const auto& d : r.drops) {
    if (d.method == "case") case_drops.push_back(d.drop);
    if (d.method == "_constant") const_drops.push_back(d.drop);
  }
  EXPECT_DOUBLE_EQ(r.rows[2].vs_case->p_value, paired_t_one_sided_greater(case_drops, const_drops).p_value);
  EXPECT_DOUBLE_EQ(r.rows[2].mean_drop, mean(const_drops));
}

TEST_F(Experiments, Rq2WithoutCaseAnnotates) {
  std::vector<NamedMethod> methods{{"_constant", constant_stub()}};
  const Rq2Result r = rq2_experiment(model, methods, index_images(images), 0.05, 0.2);
  EXPECT_EQ(r.rows[0].note, "no case method in comparison");
}

TEST_F(Experiments, SparsityWithinChannelRange) {
  const SparsityResult r = sparsity_experiment(model, index_images(images), kDefaultActivityTau, 2);
  EXPECT_EQ(r.per_image.size(), images.size());
  for (const auto& rec : r.per_image) EXPECT_LE(rec.active_channels, 32u);
  EXPECT_EQ(r.per_class_mean, aggregate_sparsity(r.per_image, 8));
  for (const auto& m : r.per_class_mean) {
    if (m) {
      EXPECT_GE(*m, 0.0);
      EXPECT_LE(*m, 32.0);
    }
  }
}

// ---------------------------------------------------------------------------

TEST(ChannelActivity, CountsChannelsAboveTau) {
  Tensor a({3, 2, 2});
  for (std::size_t i = 0; i < 4; ++i) {
    a[i] = 0.002;        // mean 0.002 > tau
    a[4 + i] = 0.001;    // mean equals tau: inactive
  }
  const ChannelActivity c = channel_activity(a, 0.001);
  EXPECT_EQ(c.active, 1u);
  EXPECT_DOUBLE_EQ(c.means[0], 0.002);
  EXPECT_EQ(channel_activity(a, 0.0).active, 2u);
  EXPECT_THROW(channel_activity(Tensor({4}), 0.001), ShapeError);
  EXPECT_THROW(channel_activity(a, -1.0), std::invalid_argument);
}

TEST(AggregateSparsity, PerClassMeans) {
  const SparsityRecord recs[] = {{0, 1, 10}, {1, 1, 13}, {2, 3, 4}};
  const auto m = aggregate_sparsity(recs, 4);
  EXPECT_FALSE(m[0].has_value());
  EXPECT_EQ(m[1], 11.5);
  EXPECT_EQ(m[3], 4.0);
  const SparsityRecord bad[] = {{0, 9, 1}};
  EXPECT_THROW(aggregate_sparsity(bad, 4), std::out_of_range);
}

TEST(Histogram, FixedBins) {
  const double s[] = {0.0, 0.04, 0.05, 0.5, 0.999, 1.0};
  const auto h = histogram(s, 0.05);
  ASSERT_EQ(h.size(), 20u);
  EXPECT_EQ(h[0].count, 2u);
  EXPECT_EQ(h[1].count, 1u);
  EXPECT_EQ(h[10].count, 1u);
  EXPECT_EQ(h[19].count, 2u);
  EXPECT_DOUBLE_EQ(h[10].lower, 0.5);
  std::size_t total = 0;
  for (const auto& b : h) total += b.count;
  EXPECT_EQ(total, 6u);
}

TEST(Histogram, AgreementMultiplesLandInTheirBin) {
  // Agreement values are j/52; each must fall in bin floor(j/52/0.05).
  for (int j = 0; j <= 52; ++j) {
    const double x = j / 52.0;
    const auto bins = histogram(std::span(&x, 1), 0.05);
    const auto it = std::find_if(bins.begin(), bins.end(), [](const HistogramBin& b) { return b.count == 1; });
    ASSERT_NE(it, bins.end());
    EXPECT_LE(it->lower, x);
    if (it + 1 != bins.end()) EXPECT_LT(x, (it + 1)->lower);
  }
}

TEST(Histogram, RejectsBadInput) {
  const double s[] = {1.2};
  EXPECT_THROW(histogram(s, 0.05), std::invalid_argument);
  EXPECT_THROW(histogram({}, 0.3), std::invalid_argument);
  EXPECT_THROW(histogram({}, 0.0), std::invalid_argument);
}

}  // namespace
}  // namespace caselab
