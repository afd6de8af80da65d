#include "caselab/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "caselab/errors.hpp"
#include "caselab/parallel.hpp"

namespace caselab {

std::size_t top_k_count(std::size_t n, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("top-k fraction must lie in (0, 1]");
  }
  // Absorb representation error so that e.g. 0.25 * 1024 stays 256.
  const double x = fraction * static_cast<double>(n);
  const auto k = static_cast<std::size_t>(std::ceil(x - 1e-9));
  return std::clamp<std::size_t>(k, std::min<std::size_t>(1, n), n);
}

std::vector<std::size_t> top_k_indices(const Tensor& values, double fraction) {
  const std::size_t k = top_k_count(values.size(), fraction);
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) {
                      return values[a] > values[b] || (values[a] == values[b] && a < b);
                    });
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> top_k_indices(const SaliencyMap& map, double fraction) {
  return top_k_indices(map.values, fraction);
}

double feature_agreement(const SaliencyMap& e, const SaliencyMap& e2, double fraction) {
  require_same_shape(e.values, e2.values, "feature_agreement");
  auto a = top_k_indices(e, fraction);
  auto b = top_k_indices(e2, fraction);
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<std::size_t> shared;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
  return static_cast<double>(shared.size()) / static_cast<double>(a.size());
}

std::vector<IndexedImage> index_images(const std::vector<LabeledImage>& images) {
  std::vector<IndexedImage> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back({i, images[i]});
  return out;
}

std::pair<ClassIndex, ClassIndex> top_two(const Tensor& scores) {
  if (scores.size() < 2) throw std::invalid_argument("top_two: need at least two classes");
  std::vector<ClassIndex> idx(scores.size());
  std::iota(idx.begin(), idx.end(), ClassIndex{0});
  std::partial_sort(idx.begin(), idx.begin() + 2, idx.end(), [&](ClassIndex a, ClassIndex b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  return {idx[0], idx[1]};
}

namespace {

std::vector<const IndexedImage*> sorted_by_index(std::span<const IndexedImage> images) {
  std::vector<const IndexedImage*> out;
  out.reserve(images.size());
  for (const auto& img : images) out.push_back(&img);
  std::sort(out.begin(), out.end(),
            [](const IndexedImage* a, const IndexedImage* b) { return a->index < b->index; });
  return out;
}

}  // namespace

Rq1Result rq1_experiment(const ModelBundle& model, const SaliencyFn& method,
                         std::span<const IndexedImage> images, double fraction, double threshold,
                         std::size_t threads) {
  if (images.empty()) throw std::invalid_argument("rq1: no images");
  top_k_count(kPixelCount, fraction);  // validates fraction up front
  const auto ordered = sorted_by_index(images);
  std::vector<std::optional<AgreementSample>> slots(ordered.size());
  parallel_for(ordered.size(), threads, [&](std::size_t i) {
    const IndexedImage& item = *ordered[i];
    const Tensor scores = logits(model, item.image.pixels);
    const auto [top1, top2] = top_two(scores);
    if (top1 != item.image.label) return;
    const SaliencyMap m1 = method(model, item.image.pixels, top1);
    const SaliencyMap m2 = method(model, item.image.pixels, top2);
    slots[i] = AgreementSample{item.index, top1, top2, feature_agreement(m1, m2, fraction)};
  });

  Rq1Result result;
  for (auto& s : slots) {
    if (s) result.samples.push_back(*s);
  }
  if (result.samples.empty()) throw std::invalid_argument("rq1: no correctly classified images");
  std::vector<double> values;
  for (const auto& s : result.samples) values.push_back(s.agreement);
  result.test = wilcoxon_one_sided_less(values, threshold);
  return result;
}

FidelityRecord ablate_and_drop(const ModelBundle& model, const Tensor& pixels, const SaliencyMap& map,
                               double fraction, double fill_value) {
  if (map.values.size() != pixels.size()) {
    throw ShapeError("ablate_and_drop: map " + to_string(map.values.dims()) +
                     " does not cover input " + to_string(pixels.dims()));
  }
  const Tensor before = predict(model, pixels);
  const ClassIndex cls = argmax(before);
  Tensor masked = pixels;
  for (std::size_t idx : top_k_indices(map, fraction)) masked[idx] = fill_value;
  const Tensor after = predict(model, masked);
  FidelityRecord r;
  r.method = map.method;
  r.predicted = cls;
  r.confidence_before = before[cls];
  r.confidence_after = after[cls];
  r.drop = r.confidence_before - r.confidence_after;
  return r;
}

Rq2Result rq2_experiment(const ModelBundle& model, std::span<const NamedMethod> methods,
                         std::span<const IndexedImage> images, double fraction, double fill_value,
                         std::size_t threads) {
  if (images.empty()) throw std::invalid_argument("rq2: no images");
  if (methods.empty()) throw std::invalid_argument("rq2: no methods");
  top_k_count(kPixelCount, fraction);
  const auto ordered = sorted_by_index(images);
  std::vector<std::vector<FidelityRecord>> slots(ordered.size());
  parallel_for(ordered.size(), threads, [&](std::size_t i) {
    const IndexedImage& item = *ordered[i];
    const ClassIndex predicted = argmax(logits(model, item.image.pixels));
    if (predicted != item.image.label) return;
    for (const auto& m : methods) {
      const SaliencyMap map = m.fn(model, item.image.pixels, predicted);
      FidelityRecord r = ablate_and_drop(model, item.image.pixels, map, fraction, fill_value);
      r.image_index = item.index;
      r.method = m.name;
      slots[i].push_back(std::move(r));
    }
  });

  Rq2Result result;
  std::vector<std::vector<double>> per_method(methods.size());
  for (auto& slot : slots) {
    for (std::size_t m = 0; m < slot.size(); ++m) per_method[m].push_back(slot[m].drop);
    for (auto& r : slot) result.drops.push_back(std::move(r));
  }
  if (result.drops.empty()) throw std::invalid_argument("rq2: no correctly classified images");

  const auto case_it = std::find_if(methods.begin(), methods.end(),
                                    [](const NamedMethod& m) { return m.name == "case"; });
  for (std::size_t m = 0; m < methods.size(); ++m) {
    Rq2Row row;
    row.method = methods[m].name;
    row.n = per_method[m].size();
    row.mean_drop = mean(per_method[m]);
    row.sd_drop = sample_sd(per_method[m]);
    if (case_it == methods.end()) {
      row.note = "no case method in comparison";
    } else {
      const auto& case_drops = per_method[static_cast<std::size_t>(case_it - methods.begin())];
      try {
        row.vs_case = paired_t_one_sided_greater(case_drops, per_method[m]);
        row.vs_case->description = "mean(case - " + row.method + ") > 0";
      } catch (const DegenerateSampleError& e) {
        row.note = e.what();
      } catch (const std::invalid_argument& e) {
        row.note = e.what();
      }
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

ChannelActivity channel_activity(const Tensor& activation, double tau) {
  if (activation.rank() != 3) {
    throw ShapeError("channel_activity: expected [N x H x W], got " + to_string(activation.dims()));
  }
  if (!(tau >= 0.0)) throw std::invalid_argument("channel_activity: tau must be >= 0");
  const std::size_t plane = activation.dim(1) * activation.dim(2);
  ChannelActivity out{Tensor({activation.dim(0)}), 0};
  for (std::size_t c = 0; c < activation.dim(0); ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < plane; ++i) acc += activation[c * plane + i];
    out.means[c] = acc / static_cast<double>(plane);
    if (out.means[c] > tau) ++out.active;
  }
  return out;
}

SparsityResult sparsity_experiment(const ModelBundle& model, std::span<const IndexedImage> images,
                                   double tau, std::size_t threads) {
  if (!(tau >= 0.0)) throw std::invalid_argument("sparsity: tau must be >= 0");
  const auto ordered = sorted_by_index(images);
  std::vector<std::optional<SparsityRecord>> slots(ordered.size());
  parallel_for(ordered.size(), threads, [&](std::size_t i) {
    const IndexedImage& item = *ordered[i];
    const Capture cap = forward_with_capture(model, item.image.pixels);
    if (argmax(cap.logits) != item.image.label) return;
    slots[i] = SparsityRecord{item.index, item.image.label, channel_activity(cap.activation, tau).active};
  });
  SparsityResult result;
  for (auto& s : slots) {
    if (s) result.per_image.push_back(*s);
  }
  result.per_class_mean = aggregate_sparsity(result.per_image, model.class_count);
  return result;
}

std::vector<std::optional<double>> aggregate_sparsity(std::span<const SparsityRecord> records,
                                                      std::size_t class_count) {
  std::vector<double> sum(class_count, 0.0);
  std::vector<std::size_t> count(class_count, 0);
  for (const auto& r : records) {
    if (r.label >= class_count) throw std::out_of_range("aggregate_sparsity: label out of range");
    sum[r.label] += static_cast<double>(r.active_channels);
    count[r.label]++;
  }
  std::vector<std::optional<double>> out(class_count);
  for (std::size_t c = 0; c < class_count; ++c) {
    if (count[c]) out[c] = sum[c] / static_cast<double>(count[c]);
  }
  return out;
}

std::vector<HistogramBin> histogram(std::span<const double> samples, double bin_width) {
  if (!(bin_width > 0.0 && bin_width <= 1.0)) {
    throw std::invalid_argument("histogram: bin width must lie in (0, 1]");
  }
  const auto bins = static_cast<std::size_t>(std::llround(1.0 / bin_width));
  if (std::abs(static_cast<double>(bins) * bin_width - 1.0) > 1e-9) {
    throw std::invalid_argument("histogram: bin width must divide 1 evenly");
  }
  std::vector<HistogramBin> out(bins);
  for (std::size_t i = 0; i < bins; ++i) out[i].lower = static_cast<double>(i) * bin_width;
  for (double x : samples) {
    if (!(x >= 0.0 && x <= 1.0)) {
      throw std::invalid_argument("histogram: sample outside [0, 1]");
    }
    auto i = static_cast<std::size_t>(std::floor(x / bin_width));
    // Keep the bin consistent with the reported lower edges.
    while (i + 1 < bins && out[i + 1].lower <= x) ++i;
    while (i > 0 && (i >= bins || out[i].lower > x)) --i;
    out[std::min(i, bins - 1)].count++;
  }
  return out;
}

}  // namespace caselab
