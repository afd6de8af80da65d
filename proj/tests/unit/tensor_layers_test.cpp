#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "caselab/errors.hpp"
#include "caselab/layers.hpp"
#include "caselab/tensor.hpp"
#include "test_support.hpp"

namespace caselab {
namespace {

using testing::max_rel_error;
using testing::random_tensor;

TEST(Tensor, RejectsZeroExtentAndSizeMismatch) {
  EXPECT_THROW(Tensor({2, 0}), ShapeError);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>(3)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 2}, std::vector<double>(4)));
}

TEST(Tensor, RowMajorIndexing) {
  Tensor t = Tensor::from_values({2, 3}, {0, 1, 2, 3, 4, 5});
  EXPECT_EQ(t.at(1, 2), 5.0);
  EXPECT_EQ(t.at(0, 1), 1.0);
  Tensor u({2, 2, 2});
  u.at(1, 0, 1) = 7.0;
  EXPECT_EQ(u[5], 7.0);
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t = Tensor::from_values({2, 3}, {0, 1, 2, 3, 4, 5});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.dims(), (Shape{3, 2}));
  EXPECT_EQ(r.data(), t.data());
  EXPECT_THROW(t.reshaped({4}), ShapeError);
}

TEST(Tensor, DotAndNorm) {
  Tensor a = Tensor::from_values({3}, {1, 2, 3});
  Tensor b = Tensor::from_values({3}, {4, -5, 6});
  EXPECT_DOUBLE_EQ(dot(a, b), 12.0);
  EXPECT_DOUBLE_EQ(squared_norm(a), 14.0);
  EXPECT_THROW(dot(a, Tensor({4})), ShapeError);
}

TEST(Tensor, FiniteCheck) {
  Tensor t({2});
  EXPECT_NO_THROW(require_finite(t, "t"));
  t[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_FALSE(t.all_finite());
  EXPECT_THROW(require_finite(t, "t"), NumericalError);
}

// ---------------------------------------------------------------------------
// Convolution against a direct transcription of the definition.

Tensor conv_oracle(const Conv2d& c, const Tensor& w, const Tensor& b, const Tensor& x) {
  const long h = static_cast<long>(x.dim(1)), wd = static_cast<long>(x.dim(2));
  const long k = static_cast<long>(c.kernel), s = static_cast<long>(c.stride),
             p = static_cast<long>(c.padding);
  const long oh = (h + 2 * p - k) / s + 1, ow = (wd + 2 * p - k) / s + 1;
  Tensor out({c.out_channels, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)});
  for (std::size_t o = 0; o < c.out_channels; ++o) {
    for (long i = 0; i < oh; ++i) {
      for (long j = 0; j < ow; ++j) {
        double acc = b[o];
        for (std::size_t ci = 0; ci < c.in_channels; ++ci) {
          for (long ky = 0; ky < k; ++ky) {
            for (long kx = 0; kx < k; ++kx) {
              const long y = i * s + ky - p, xx = j * s + kx - p;
              if (y < 0 || y >= h || xx < 0 || xx >= wd) continue;
              acc += w[((o * c.in_channels + ci) * c.kernel + ky) * c.kernel + kx] *
                     x.at(ci, y, xx);
            }
          }
        }
        out.at(o, i, j) = acc;
      }
    }
  }
  return out;
}

TEST(Conv2d, OnesKernelCountsNeighbours) {
  LayerSpec spec{"c", Conv2d{1, 1, 3, 1, 1}};
  std::vector<Tensor> params{Tensor({1, 1, 3, 3}, 1.0), Tensor({1})};
  Tensor out = layer_forward(spec, params, Tensor({1, 4, 4}, 1.0));
  EXPECT_EQ(out.at(0, 0, 0), 4.0);
  EXPECT_EQ(out.at(0, 0, 1), 6.0);
  EXPECT_EQ(out.at(0, 1, 1), 9.0);
  EXPECT_EQ(out.at(0, 3, 3), 4.0);
}

struct ConvCase {
  Conv2d conv;
  std::size_t h, w;
};

class ConvGeometry : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvGeometry, MatchesDirectDefinition) {
  const ConvCase& cc = GetParam();
  LayerSpec spec{"c", cc.conv};
  const auto shapes = spec.param_shapes();
  std::vector<Tensor> params{random_tensor(shapes[0], 1), random_tensor(shapes[1], 2)};
  Tensor x = random_tensor({cc.conv.in_channels, cc.h, cc.w}, 3);
  Tensor got = layer_forward(spec, params, x);
  Tensor want = conv_oracle(cc.conv, params[0], params[1], x);
  ASSERT_EQ(got.dims(), want.dims());
  EXPECT_LT(max_rel_error(got, want), 1e-14);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvGeometry,
                         ::testing::Values(ConvCase{{1, 1, 3, 1, 1}, 5, 5},
                                           ConvCase{{2, 3, 3, 1, 1}, 6, 7},
                                           ConvCase{{2, 2, 3, 2, 1}, 7, 6},
                                           ConvCase{{3, 2, 5, 1, 2}, 6, 6},
                                           ConvCase{{1, 2, 3, 1, 0}, 5, 4},
                                           ConvCase{{2, 1, 1, 1, 0}, 3, 3},
                                           ConvCase{{1, 1, 3, 3, 2}, 4, 4}));

// ---------------------------------------------------------------------------
// Vector-Jacobian products against central differences of <c, f(x)>.

double pairing(const LayerSpec& spec, std::span<const Tensor> params, const Tensor& x, const Tensor& c) {
  return dot(layer_forward(spec, params, x), c);
}

void expect_vjp_matches_fd(const LayerSpec& spec, std::vector<Tensor> params, const Tensor& x,
                           double tol) {
  const Tensor y = layer_forward(spec, params, x);
  const Tensor c = random_tensor(y.dims(), 99);
  const LayerGradients g = layer_backward(spec, params, x, c, true);
  const double h = 1e-6;

  Tensor fd(x.dims());
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    fd[i] = (pairing(spec, params, xp, c) - pairing(spec, params, xm, c)) / (2 * h);
  }
  EXPECT_LT(max_rel_error(g.input, fd), tol) << spec.kind_name() << " input";

  ASSERT_EQ(g.params.size(), params.size());
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor fdp(params[p].dims());
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      auto pp = params, pm = params;
      pp[p][i] += h;
      pm[p][i] -= h;
      fdp[i] = (pairing(spec, pp, x, c) - pairing(spec, pm, x, c)) / (2 * h);
    }
    EXPECT_LT(max_rel_error(g.params[p], fdp), tol) << spec.kind_name() << " param " << p;
  }
  EXPECT_EQ(layer_vjp(spec, params, x, c), g.input);
}

TEST(LayerVjp, Conv) {
  LayerSpec spec{"c", Conv2d{2, 3, 3, 1, 1}};
  const auto s = spec.param_shapes();
  expect_vjp_matches_fd(spec, {random_tensor(s[0], 4), random_tensor(s[1], 5)},
                        random_tensor({2, 5, 6}, 6), 1e-6);
}

TEST(LayerVjp, StridedConv) {
  LayerSpec spec{"c", Conv2d{2, 2, 3, 2, 1}};
  const auto s = spec.param_shapes();
  expect_vjp_matches_fd(spec, {random_tensor(s[0], 7), random_tensor(s[1], 8)},
                        random_tensor({2, 7, 6}, 9), 1e-6);
}

TEST(LayerVjp, Dense) {
  LayerSpec spec{"d", Dense{6, 4}};
  const auto s = spec.param_shapes();
  expect_vjp_matches_fd(spec, {random_tensor(s[0], 10), random_tensor(s[1], 11)},
                        random_tensor({6}, 12), 1e-6);
}

TEST(LayerVjp, Relu) {
  // Keep entries away from the kink.
  Tensor x = random_tensor({2, 4, 4}, 13);
  for (double& v : x.values()) v += v >= 0 ? 0.1 : -0.1;
  expect_vjp_matches_fd({"r", Relu{}}, {}, x, 1e-5);
}

TEST(LayerVjp, MaxPool) {
  expect_vjp_matches_fd({"p", MaxPool2x2{}}, {}, random_tensor({2, 4, 6}, 14), 1e-5);
}

TEST(LayerVjp, GlobalAvgPool) {
  expect_vjp_matches_fd({"g", GlobalAvgPool{}}, {}, random_tensor({3, 4, 5}, 15), 1e-5);
}

TEST(LayerVjp, Softmax) {
  expect_vjp_matches_fd({"s", Softmax{}}, {}, random_tensor({5}, 16, -2, 2), 1e-5);
}

TEST(MaxPool, RoutesToFirstArgmax) {
  LayerSpec spec{"p", MaxPool2x2{}};
  Tensor x = Tensor::from_values({1, 2, 2}, {1, 3, 3, 0});
  Tensor g = layer_vjp(spec, {}, x, Tensor({1, 1, 1}, 1.0));
  EXPECT_EQ(g.data(), (std::vector<double>{0, 1, 0, 0}));
}

TEST(MaxPool, FloorsOddExtents) {
  LayerSpec spec{"p", MaxPool2x2{}};
  EXPECT_EQ(spec.output_shape({2, 5, 7}), (Shape{2, 2, 3}));
}

TEST(LayerSpec, ShapeErrorsNameTheLayer) {
  LayerSpec spec{"conv9", Conv2d{3, 4, 3, 1, 1}};
  try {
    spec.output_shape({2, 8, 8});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("conv9"), std::string::npos);
  }
  EXPECT_THROW(layer_forward(spec, {}, Tensor({3, 4, 4})), ShapeError);
}

TEST(LayerSpec, ValidateRejectsBadGeometry) {
  EXPECT_THROW(validate({"c", Conv2d{1, 1, 2, 1, 0}}), std::invalid_argument);
  EXPECT_THROW(validate({"c", Conv2d{1, 1, 3, 0, 1}}), std::invalid_argument);
  EXPECT_THROW(validate({"d", Dense{0, 3}}), std::invalid_argument);
  EXPECT_NO_THROW(validate({"c", Conv2d{1, 1, 3, 1, 1}}));
}

// ---------------------------------------------------------------------------

TEST(BilinearUpsample, HalfPixelCentres) {
  // Source values 2y + x; interior samples are exact, borders clamp.
  Tensor src = Tensor::from_values({2, 2}, {0, 1, 2, 3});
  Tensor up = bilinear_upsample(src, 2);
  const std::vector<double> want = {0,   0.25, 0.75, 1,    0.5, 0.75, 1.25, 1.5,
                                    1.5, 1.75, 2.25, 2.5,  2,   2.25, 2.75, 3};
  ASSERT_EQ(up.dims(), (Shape{4, 4}));
  for (std::size_t i = 0; i < want.size(); ++i) EXPECT_DOUBLE_EQ(up[i], want[i]) << i;
}

TEST(BilinearUpsample, IdentityAndConstants) {
  Tensor src = random_tensor({3, 5}, 17);
  EXPECT_EQ(bilinear_upsample(src, 1), src);
  Tensor up = bilinear_upsample(Tensor({8, 8}, 2.5), 4);
  EXPECT_EQ(up.dims(), (Shape{32, 32}));
  for (double v : up.values()) EXPECT_DOUBLE_EQ(v, 2.5);
  EXPECT_THROW(bilinear_upsample(src, 0), std::invalid_argument);
  EXPECT_THROW(bilinear_upsample(Tensor({2, 2, 2}), 2), ShapeError);
}

TEST(BilinearUpsample, StaysWithinSourceRange) {
  Tensor src = random_tensor({8, 8}, 18);
  Tensor up = bilinear_upsample(src, 4);
  const auto [lo, hi] = std::minmax_element(src.values().begin(), src.values().end());
  for (double v : up.values()) {
    EXPECT_GE(v, *lo - 1e-15);
    EXPECT_LE(v, *hi + 1e-15);
  }
}

TEST(Softmax, SumsToOneAndIsShiftInvariant) {
  Tensor z = Tensor::from_values({4}, {1, 2, 3, 4});
  Tensor p = softmax(z);
  double s = 0;
  for (double v : p.values()) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  Tensor z2 = z;
  for (double& v : z2.values()) v += 1000.0;
  EXPECT_LT(max_rel_error(softmax(z2), p), 1e-14);
  EXPECT_DOUBLE_EQ(softmax(Tensor({3}))[0], 1.0 / 3.0);
}

TEST(Softmax, RejectsNonFinite) {
  Tensor z({2});
  z[0] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(softmax(z), NumericalError);
}

}  // namespace
}  // namespace caselab
