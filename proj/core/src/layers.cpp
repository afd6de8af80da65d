#include "caselab/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "caselab/errors.hpp"

namespace caselab {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

[[noreturn]] void shape_fail(const LayerSpec& spec, const std::string& what, const Shape& got,
                             const std::string& expected) {
  throw ShapeError("layer '" + spec.name + "' (" + spec.kind_name() + "): " + what + " " +
                   to_string(got) + ", expected " + expected);
}

void check_params(const LayerSpec& spec, std::span<const Tensor> params) {
  const auto shapes = spec.param_shapes();
  if (params.size() != shapes.size()) {
    throw ShapeError("layer '" + spec.name + "' (" + spec.kind_name() + "): expected " +
                     std::to_string(shapes.size()) + " parameter tensors, got " +
                     std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (params[i].dims() != shapes[i]) {
      shape_fail(spec, "parameter " + std::to_string(i) + " has shape", params[i].dims(),
                 to_string(shapes[i]));
    }
  }
}

// Output positions o with 0 <= o*stride - pad + k < extent, as a half-open range.
struct Span1D {
  std::size_t begin;
  std::size_t end;
};

Span1D valid_outputs(std::size_t out_extent, std::size_t in_extent, std::size_t stride,
                     std::size_t pad, std::size_t k) {
  // o*stride + k >= pad  and  o*stride + k < in_extent + pad
  std::size_t begin = 0;
  if (pad > k) begin = (pad - k + stride - 1) / stride;
  std::size_t end = 0;
  if (in_extent + pad > k) end = (in_extent + pad - k - 1) / stride + 1;
  end = std::min(end, out_extent);
  if (begin > end) begin = end;
  return {begin, end};
}

Tensor conv_forward(const Conv2d& c, std::span<const Tensor> params, const Tensor& in,
                    const Shape& out_shape) {
  const Tensor& w = params[0];
  const Tensor& b = params[1];
  const std::size_t h = in.dim(1), wd = in.dim(2);
  const std::size_t oh = out_shape[1], ow = out_shape[2];
  const std::size_t k = c.kernel, s = c.stride, p = c.padding;
  Tensor out(out_shape);
  for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
    double* out_plane = &out[oc * oh * ow];
    std::fill(out_plane, out_plane + oh * ow, b[oc]);
    for (std::size_t ic = 0; ic < c.in_channels; ++ic) {
      const double* in_plane = &in[ic * h * wd];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto rows = valid_outputs(oh, h, s, p, ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto cols = valid_outputs(ow, wd, s, p, kx);
          const double wv = w[((oc * c.in_channels + ic) * k + ky) * k + kx];
          for (std::size_t oy = rows.begin; oy < rows.end; ++oy) {
            const double* src = in_plane + (oy * s + ky - p) * wd;
            double* dst = out_plane + oy * ow;
            for (std::size_t ox = cols.begin; ox < cols.end; ++ox) {
              dst[ox] += wv * src[ox * s + kx - p];
            }
          }
        }
      }
    }
  }
  return out;
}

LayerGradients conv_backward(const Conv2d& c, std::span<const Tensor> params, const Tensor& in,
                             const Tensor& cot, bool with_params) {
  const Tensor& w = params[0];
  const std::size_t h = in.dim(1), wd = in.dim(2);
  const std::size_t oh = cot.dim(1), ow = cot.dim(2);
  const std::size_t k = c.kernel, s = c.stride, p = c.padding;
  LayerGradients g{Tensor(in.dims()), {}};
  Tensor dw, db;
  if (with_params) {
    dw = Tensor(w.dims());
    db = Tensor(params[1].dims());
  }
  for (std::size_t oc = 0; oc < c.out_channels; ++oc) {
    const double* cot_plane = &cot[oc * oh * ow];
    if (with_params) {
      double acc = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) acc += cot_plane[i];
      db[oc] = acc;
    }
    for (std::size_t ic = 0; ic < c.in_channels; ++ic) {
      const double* in_plane = &in[ic * h * wd];
      double* din_plane = &g.input[ic * h * wd];
      for (std::size_t ky = 0; ky < k; ++ky) {
        const auto rows = valid_outputs(oh, h, s, p, ky);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const auto cols = valid_outputs(ow, wd, s, p, kx);
          const std::size_t widx = ((oc * c.in_channels + ic) * k + ky) * k + kx;
          const double wv = w[widx];
          double wacc = 0.0;
          for (std::size_t oy = rows.begin; oy < rows.end; ++oy) {
            const std::size_t row_off = (oy * s + ky - p) * wd;
            const double* src = in_plane + row_off;
            double* dsrc = din_plane + row_off;
            const double* cg = cot_plane + oy * ow;
            for (std::size_t ox = cols.begin; ox < cols.end; ++ox) {
              const std::size_t ix = ox * s + kx - p;
              dsrc[ix] += wv * cg[ox];
              wacc += src[ix] * cg[ox];
            }
          }
          if (with_params) dw[widx] = wacc;
        }
      }
    }
  }
  if (with_params) {
    g.params.push_back(std::move(dw));
    g.params.push_back(std::move(db));
  }
  return g;
}

Tensor maxpool_forward(const Tensor& in, const Shape& out_shape) {
  Tensor out(out_shape);
  const std::size_t wd = in.dim(2);
  for (std::size_t c = 0; c < out_shape[0]; ++c) {
    for (std::size_t oy = 0; oy < out_shape[1]; ++oy) {
      for (std::size_t ox = 0; ox < out_shape[2]; ++ox) {
        const double* base = &in[(c * in.dim(1) + 2 * oy) * wd + 2 * ox];
        out.at(c, oy, ox) = std::max(std::max(base[0], base[1]), std::max(base[wd], base[wd + 1]));
      }
    }
  }
  return out;
}

Tensor maxpool_backward(const Tensor& in, const Tensor& cot) {
  Tensor din(in.dims());
  const std::size_t wd = in.dim(2);
  for (std::size_t c = 0; c < cot.dim(0); ++c) {
    for (std::size_t oy = 0; oy < cot.dim(1); ++oy) {
      for (std::size_t ox = 0; ox < cot.dim(2); ++ox) {
        const std::size_t base = (c * in.dim(1) + 2 * oy) * wd + 2 * ox;
        const std::size_t cand[4] = {base, base + 1, base + wd, base + wd + 1};
        std::size_t best = cand[0];
        for (std::size_t i = 1; i < 4; ++i) {
          if (in[cand[i]] > in[best]) best = cand[i];
        }
        din[best] += cot.at(c, oy, ox);
      }
    }
  }
  return din;
}

}  // namespace

std::string LayerSpec::kind_name() const {
  return std::visit(Overloaded{
                        [](const Conv2d&) { return std::string("conv2d"); },
                        [](const Relu&) { return std::string("relu"); },
                        [](const MaxPool2x2&) { return std::string("maxpool2x2"); },
                        [](const GlobalAvgPool&) { return std::string("global_avg_pool"); },
                        [](const Dense&) { return std::string("dense"); },
                        [](const Softmax&) { return std::string("softmax"); },
                    },
                    kind);
}

std::size_t LayerSpec::param_count() const { return param_shapes().size(); }

std::vector<Shape> LayerSpec::param_shapes() const {
  return std::visit(Overloaded{
                        [](const Conv2d& c) -> std::vector<Shape> {
                          return {{c.out_channels, c.in_channels, c.kernel, c.kernel},
                                  {c.out_channels}};
                        },
                        [](const Dense& d) -> std::vector<Shape> {
                          return {{d.out_features, d.in_features}, {d.out_features}};
                        },
                        [](const auto&) -> std::vector<Shape> { return {}; },
                    },
                    kind);
}

Shape LayerSpec::output_shape(const Shape& input) const {
  return std::visit(
      Overloaded{
          [&](const Conv2d& c) -> Shape {
            if (input.size() != 3 || input[0] != c.in_channels) {
              shape_fail(*this, "input", input, "[" + std::to_string(c.in_channels) + "xHxW]");
            }
            if (input[1] + 2 * c.padding < c.kernel || input[2] + 2 * c.padding < c.kernel) {
              shape_fail(*this, "input", input, "spatial extent >= kernel after padding");
            }
            return {c.out_channels, (input[1] + 2 * c.padding - c.kernel) / c.stride + 1,
                    (input[2] + 2 * c.padding - c.kernel) / c.stride + 1};
          },
          [&](const Relu&) -> Shape { return input; },
          [&](const Softmax&) -> Shape {
            if (input.size() != 1) shape_fail(*this, "input", input, "rank 1");
            return input;
          },
          [&](const MaxPool2x2&) -> Shape {
            if (input.size() != 3 || input[1] < 2 || input[2] < 2) {
              shape_fail(*this, "input", input, "[CxHxW] with H, W >= 2");
            }
            return {input[0], input[1] / 2, input[2] / 2};
          },
          [&](const GlobalAvgPool&) -> Shape {
            if (input.size() != 3) shape_fail(*this, "input", input, "[CxHxW]");
            return {input[0]};
          },
          [&](const Dense& d) -> Shape {
            if (input.size() != 1 || input[0] != d.in_features) {
              shape_fail(*this, "input", input, "[" + std::to_string(d.in_features) + "]");
            }
            return {d.out_features};
          },
      },
      kind);
}

void validate(const LayerSpec& spec) {
  if (const auto* c = std::get_if<Conv2d>(&spec.kind)) {
    if (c->stride < 1) throw std::invalid_argument("conv2d '" + spec.name + "': stride must be >= 1");
    if (c->kernel % 2 == 0) {
      throw std::invalid_argument("conv2d '" + spec.name + "': kernel extent must be odd");
    }
    if (c->in_channels == 0 || c->out_channels == 0) {
      throw std::invalid_argument("conv2d '" + spec.name + "': channel counts must be positive");
    }
  }
  if (const auto* d = std::get_if<Dense>(&spec.kind)) {
    if (d->in_features == 0 || d->out_features == 0) {
      throw std::invalid_argument("dense '" + spec.name + "': feature counts must be positive");
    }
  }
}

Tensor layer_forward(const LayerSpec& spec, std::span<const Tensor> params, const Tensor& input) {
  check_params(spec, params);
  const Shape out_shape = spec.output_shape(input.dims());
  Tensor out = std::visit(
      Overloaded{
          [&](const Conv2d& c) { return conv_forward(c, params, input, out_shape); },
          [&](const Relu&) {
            Tensor o = input;
            for (double& v : o.values()) v = v > 0.0 ? v : 0.0;
            return o;
          },
          [&](const MaxPool2x2&) { return maxpool_forward(input, out_shape); },
          [&](const GlobalAvgPool&) {
            Tensor o(out_shape);
            const std::size_t plane = input.dim(1) * input.dim(2);
            for (std::size_t c = 0; c < out_shape[0]; ++c) {
              double acc = 0.0;
              for (std::size_t i = 0; i < plane; ++i) acc += input[c * plane + i];
              o[c] = acc / static_cast<double>(plane);
            }
            return o;
          },
          [&](const Dense& d) {
            const Tensor& w = params[0];
            Tensor o = params[1];
            for (std::size_t r = 0; r < d.out_features; ++r) {
              double acc = 0.0;
              for (std::size_t c = 0; c < d.in_features; ++c) acc += w[r * d.in_features + c] * input[c];
              o[r] += acc;
            }
            return o;
          },
          [&](const Softmax&) { return softmax(input); },
      },
      spec.kind);
  require_finite(out, "layer '" + spec.name + "' forward");
  return out;
}

LayerGradients layer_backward(const LayerSpec& spec, std::span<const Tensor> params,
                              const Tensor& input, const Tensor& cotangent, bool with_params) {
  check_params(spec, params);
  const Shape out_shape = spec.output_shape(input.dims());
  if (cotangent.dims() != out_shape) {
    shape_fail(spec, "cotangent", cotangent.dims(), to_string(out_shape));
  }
  LayerGradients g = std::visit(
      Overloaded{
          [&](const Conv2d& c) { return conv_backward(c, params, input, cotangent, with_params); },
          [&](const Relu&) {
            Tensor d = cotangent;
            for (std::size_t i = 0; i < d.size(); ++i) {
              if (!(input[i] > 0.0)) d[i] = 0.0;
            }
            return LayerGradients{std::move(d), {}};
          },
          [&](const MaxPool2x2&) { return LayerGradients{maxpool_backward(input, cotangent), {}}; },
          [&](const GlobalAvgPool&) {
            Tensor d(input.dims());
            const std::size_t plane = input.dim(1) * input.dim(2);
            const double scale = 1.0 / static_cast<double>(plane);
            for (std::size_t c = 0; c < input.dim(0); ++c) {
              const double v = cotangent[c] * scale;
              std::fill(&d[c * plane], &d[c * plane] + plane, v);
            }
            return LayerGradients{std::move(d), {}};
          },
          [&](const Dense& dn) {
            const Tensor& w = params[0];
            Tensor d(input.dims());
            for (std::size_t r = 0; r < dn.out_features; ++r) {
              const double cr = cotangent[r];
              for (std::size_t c = 0; c < dn.in_features; ++c) d[c] += w[r * dn.in_features + c] * cr;
            }
            LayerGradients out{std::move(d), {}};
            if (with_params) {
              Tensor dw(w.dims());
              for (std::size_t r = 0; r < dn.out_features; ++r) {
                for (std::size_t c = 0; c < dn.in_features; ++c) {
                  dw[r * dn.in_features + c] = cotangent[r] * input[c];
                }
              }
              out.params.push_back(std::move(dw));
              out.params.push_back(cotangent);
            }
            return out;
          },
          [&](const Softmax&) {
            // J^T c = s * (c - <c, s>)
            const Tensor s = softmax(input);
            const double cs = dot(cotangent, s);
            Tensor d(input.dims());
            for (std::size_t i = 0; i < d.size(); ++i) d[i] = s[i] * (cotangent[i] - cs);
            return LayerGradients{std::move(d), {}};
          },
      },
      spec.kind);
  require_finite(g.input, "layer '" + spec.name + "' backward");
  return g;
}

Tensor layer_vjp(const LayerSpec& spec, std::span<const Tensor> params, const Tensor& input,
                 const Tensor& cotangent) {
  return layer_backward(spec, params, input, cotangent, false).input;
}

Tensor bilinear_upsample(const Tensor& map, std::size_t beta) {
  if (beta == 0) throw std::invalid_argument("bilinear_upsample: beta must be >= 1");
  if (map.rank() != 2) {
    throw ShapeError("bilinear_upsample: expected a rank-2 map, got " + to_string(map.dims()));
  }
  if (beta == 1) return map;
  const std::size_t h = map.dim(0), w = map.dim(1);
  const std::size_t oh = h * beta, ow = w * beta;

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [beta](std::size_t out_extent, std::size_t in_extent) {
    std::vector<Tap> t(out_extent);
    const double max_coord = static_cast<double>(in_extent - 1);
    for (std::size_t i = 0; i < out_extent; ++i) {
      double src = (static_cast<double>(i) + 0.5) / static_cast<double>(beta) - 0.5;
      src = std::clamp(src, 0.0, max_coord);
      const auto lo = static_cast<std::size_t>(std::floor(src));
      const std::size_t hi = std::min(lo + 1, in_extent - 1);
      t[i] = {lo, hi, src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(oh, h);
  const auto tx = taps(ow, w);

  Tensor out({oh, ow});
  for (std::size_t i = 0; i < oh; ++i) {
    const auto& ry = ty[i];
    for (std::size_t j = 0; j < ow; ++j) {
      const auto& rx = tx[j];
      // lerp is exact at the endpoints and monotone, so results stay inside the
      // hull of the four taps.
      const double top = std::lerp(map.at(ry.lo, rx.lo), map.at(ry.lo, rx.hi), rx.frac);
      const double bottom = std::lerp(map.at(ry.hi, rx.lo), map.at(ry.hi, rx.hi), rx.frac);
      out.at(i, j) = std::lerp(top, bottom, ry.frac);
    }
  }
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.rank() != 1) throw ShapeError("softmax: expected rank 1, got " + to_string(logits.dims()));
  require_finite(logits, "softmax input");
  const double mx = *std::max_element(logits.values().begin(), logits.values().end());
  Tensor out(logits.dims());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out.values()) v /= total;
  return out;
}

}  // namespace caselab
