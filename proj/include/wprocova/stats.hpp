// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

namespace wprocova::stats {

/// Euler-Mascheroni constant.
inline constexpr double kEulerGamma = 0.57721566490153286061;
/// E[log Z^2] for Z ~ N(0,1) is -(kEulerGamma + log 2).
inline constexpr double kLogChiSqMeanShift = 0.57721566490153286061 + 0.69314718055994530942;
/// Var[log Z^2] for Z ~ N(0,1).
inline constexpr double kLogChiSqVariance = 4.93480220054467930942;  // pi^2 / 2

double normal_cdf(double x);
double normal_quantile(double p);
double student_t_cdf(double x, double df);
double student_t_quantile(double p, double df);

/// Pairwise (cascade) summation; the result depends only on the order of the
/// input, not on how it was produced.
double pairwise_sum(std::span<const double> values);
double mean(std::span<const double> values);
/// Sample variance with the n - 1 denominator.
double sample_variance(std::span<const double> values);
double median(std::vector<double> values);

/// Average ranks (1-based) with ties sharing their mean rank.
std::vector<double> ranks(std::span<const double> values);
double pearson(std::span<const double> a, std::span<const double> b);
double spearman(std::span<const double> a, std::span<const double> b);

}  // namespace wprocova::stats
