#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace caselab {

enum class TestKind { kWilcoxonOneSidedLess, kPairedTOneSidedGreater };

std::string_view test_kind_name(TestKind kind);

struct StatTestResult {
  TestKind kind = TestKind::kWilcoxonOneSidedLess;
  std::size_t n_effective = 0;
  double statistic = 0.0;  // W+ or t
  double p_value = 1.0;
  bool reject_at_05 = false;  // p_value < 0.05
  bool exact = false;         // Wilcoxon: enumeration rather than normal approximation
  std::string description;    // threshold or pairing
};

/// Sample sizes up to this use the exact null distribution.
inline constexpr std::size_t kWilcoxonExactMaxN = 20;

/// Midranks (1-based) of `values`; entries within `tolerance` of their
/// sorted neighbour share a rank.
std::vector<double> midranks(std::span<const double> values, double tolerance = 0.0);

/// P(W+ <= w) under the signed-rank null for the given ranks (integers or
/// half-integers), counting all 2^n sign assignments.
double wilcoxon_exact_lower_tail(std::span<const double> ranks, double w);

/// Normal approximation of P(W+ <= w) with tie-corrected variance and a
/// +0.5 continuity correction. At the ends of the support the exact values
/// 2^-n (w below the smallest rank) and 1 (w at the full rank sum) are
/// returned instead.
double wilcoxon_normal_lower_tail(std::span<const double> ranks, double w);

struct SignedRanks {
  std::vector<double> ranks;  // ranks of |d| for non-zero d
  double w_plus = 0.0;        // sum of ranks with d > 0
};

/// Differences from `threshold` with zeros removed, ranked by magnitude.
SignedRanks signed_ranks(std::span<const double> samples, double threshold);

/// One-sided signed-rank test of H1: median(samples) < threshold.
/// Exact for n_effective <= 20, normal approximation above. Throws
/// DegenerateSampleError when every difference is zero.
StatTestResult wilcoxon_one_sided_less(std::span<const double> samples, double threshold = 0.5);

/// Student-t cumulative distribution and upper tail.
double student_t_cdf(double t, double df);
double student_t_sf(double t, double df);

/// Paired one-sided t-test of H1: mean(a - b) > 0. Throws
/// DegenerateSampleError when the differences have zero variance.
StatTestResult paired_t_one_sided_greater(std::span<const double> a, std::span<const double> b);

double mean(std::span<const double> xs);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double sample_sd(std::span<const double> xs);

}  // namespace caselab
