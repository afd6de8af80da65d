#include "caselab/statistics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <boost/math/special_functions/beta.hpp>

#include "caselab/errors.hpp"

namespace caselab {

namespace {

constexpr double kTieTolerance = 1e-12;

StatTestResult finish(TestKind kind, std::size_t n, double stat, double p, bool exact,
                      std::string description) {
  p = std::clamp(p, 0.0, 1.0);
  return {kind, n, stat, p, p < 0.05, exact, std::move(description)};
}

}  // namespace

std::string_view test_kind_name(TestKind kind) {
  return kind == TestKind::kWilcoxonOneSidedLess ? "wilcoxon_one_sided" : "paired_t_one_sided";
}

std::vector<double> midranks(std::span<const double> values, double tolerance) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] - values[order[j - 1]] <= tolerance) ++j;
    // Positions i..j-1 (0-based) share the average of ranks i+1..j.
    const double rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t t = i; t < j; ++t) ranks[order[t]] = rank;
    i = j;
  }
  return ranks;
}

double wilcoxon_exact_lower_tail(std::span<const double> ranks, double w) {
  if (ranks.size() > 52) {
    throw std::invalid_argument("wilcoxon_exact_lower_tail: n > 52 exceeds exact counting range");
  }
  // Doubled ranks are integers, so the distribution of 2*W+ is a subset-sum
  // count over them; counts stay below 2^53 and are exact in a double.
  std::vector<long> doubled;
  long total = 0;
  for (double r : ranks) {
    const long d = std::lround(2.0 * r);
    if (std::abs(2.0 * r - static_cast<double>(d)) > 1e-9 || d <= 0) {
      throw std::invalid_argument("wilcoxon_exact_lower_tail: ranks must be positive half-integers");
    }
    doubled.push_back(d);
    total += d;
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  long reach = 0;
  for (long d : doubled) {
    reach += d;
    for (long s = reach; s >= d; --s) count[static_cast<std::size_t>(s)] += count[static_cast<std::size_t>(s - d)];
  }
  const double limit = std::floor(2.0 * w + 1e-9);
  double hits = 0.0;
  for (long s = 0; s <= total && static_cast<double>(s) <= limit; ++s) hits += count[static_cast<std::size_t>(s)];
  return std::ldexp(hits, -static_cast<int>(ranks.size()));
}

double wilcoxon_normal_lower_tail(std::span<const double> ranks, double w) {
  const auto n = static_cast<double>(ranks.size());
  if (ranks.empty()) throw std::invalid_argument("wilcoxon_normal_lower_tail: no ranks");
  const double mu = n * (n + 1.0) / 4.0;
  // Both ends of the support are known exactly: below the smallest rank
  // only the all-negative pattern remains, and the full rank sum covers
  // every pattern.
  if (w < 0.0) return 0.0;
  if (w < *std::min_element(ranks.begin(), ranks.end())) return std::ldexp(1.0, -static_cast<int>(ranks.size()));
  if (w >= std::accumulate(ranks.begin(), ranks.end(), 0.0)) return 1.0;
  // Tie groups share a midrank value; variance correction sum(t^3 - t) / 48.
  std::vector<double> sorted(ranks.begin(), ranks.end());
  std::sort(sorted.begin(), sorted.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::size_t j = i;
    while (j < sorted.size() && sorted[j] == sorted[i]) ++j;
    const auto t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
  if (!(var > 0.0)) return w >= mu ? 1.0 : 0.0;
  const double z = (w + 0.5 - mu) / std::sqrt(var);
  return 0.5 * std::erfc(-z / std::sqrt(2.0));
}

SignedRanks signed_ranks(std::span<const double> samples, double threshold) {
  double scale = std::max(1.0, std::abs(threshold));
  for (double x : samples) {
    if (!std::isfinite(x)) throw NumericalError("wilcoxon: non-finite sample");
    scale = std::max(scale, std::abs(x));
  }
  const double tol = kTieTolerance * scale;
  std::vector<double> diffs;
  for (double x : samples) {
    const double d = x - threshold;
    if (std::abs(d) > tol) diffs.push_back(d);
  }
  std::vector<double> mags(diffs.size());
  std::transform(diffs.begin(), diffs.end(), mags.begin(), [](double d) { return std::abs(d); });
  SignedRanks out;
  out.ranks = midranks(mags, tol);
  for (std::size_t i = 0; i < diffs.size(); ++i) {
    if (diffs[i] > 0.0) out.w_plus += out.ranks[i];
  }
  return out;
}

StatTestResult wilcoxon_one_sided_less(std::span<const double> samples, double threshold) {
  if (samples.empty()) throw std::invalid_argument("wilcoxon: empty sample");
  const SignedRanks sr = signed_ranks(samples, threshold);
  if (sr.ranks.empty()) {
    throw DegenerateSampleError("degenerate sample: no non-zero differences");
  }
  const bool exact = sr.ranks.size() <= kWilcoxonExactMaxN;
  const double p = exact ? wilcoxon_exact_lower_tail(sr.ranks, sr.w_plus)
                         : wilcoxon_normal_lower_tail(sr.ranks, sr.w_plus);
  char desc[64];
  std::snprintf(desc, sizeof desc, "median < %g", threshold);
  return finish(TestKind::kWilcoxonOneSidedLess, sr.ranks.size(), sr.w_plus, p, exact, desc);
}

double student_t_sf(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("student_t: degrees of freedom must be positive");
  if (std::isnan(t)) throw NumericalError("student_t: NaN statistic");
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
  const double x = df / (df + t * t);
  const double two_tail = boost::math::ibeta(df / 2.0, 0.5, x);
  return t > 0.0 ? 0.5 * two_tail : 1.0 - 0.5 * two_tail;
}

double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw std::invalid_argument("student_t: degrees of freedom must be positive");
  if (std::isnan(t)) throw NumericalError("student_t: NaN statistic");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double x = df / (df + t * t);
  const double two_tail = boost::math::ibeta(df / 2.0, 0.5, x);
  return t > 0.0 ? 1.0 - 0.5 * two_tail : 0.5 * two_tail;
}

double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_sd(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

StatTestResult paired_t_one_sided_greater(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired t-test: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired t-test: need at least 2 pairs");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
  for (double x : d) {
    if (!std::isfinite(x)) throw NumericalError("paired t-test: non-finite difference");
  }
  const double sd = sample_sd(d);
  if (!(sd > 0.0)) throw DegenerateSampleError("degenerate pairing: zero variance");
  const auto n = static_cast<double>(d.size());
  const double t = mean(d) / (sd / std::sqrt(n));
  return finish(TestKind::kPairedTOneSidedGreater, d.size(), t, student_t_sf(t, n - 1.0), true,
                "mean(a - b) > 0");
}

}  // namespace caselab
