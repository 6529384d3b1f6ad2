// SPDX-License-Identifier: Apache-2.0
#include "wprocova/stats.hpp"

#include "wprocova/error.hpp"

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wprocova::stats {

double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "normal quantile requires p in (0, 1)");
    }
    return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

double student_t_cdf(double x, double df) {
    if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
    return boost::math::cdf(boost::math::students_t_distribution<double>(df), x);
}

double student_t_quantile(double p, double df) {
    if (!(p > 0.0 && p < 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "t quantile requires p in (0, 1)");
    }
    return boost::math::quantile(boost::math::students_t_distribution<double>(df), p);
}

double pairwise_sum(std::span<const double> values) {
    constexpr std::size_t kLeaf = 32;
    if (values.size() <= kLeaf) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

double mean(std::span<const double> values) {
    if (values.empty()) throw Error(ErrorKind::EmptyInput, "mean of an empty sample");
    return pairwise_sum(values) / static_cast<double>(values.size());
}

double sample_variance(std::span<const double> values) {
    if (values.size() < 2) throw Error(ErrorKind::EmptyInput, "sample variance needs two values");
    const double m = mean(values);
    std::vector<double> sq(values.size());
    std::transform(values.begin(), values.end(), sq.begin(), [m](double v) { return (v - m) * (v - m); });
    return pairwise_sum(sq) / static_cast<double>(values.size() - 1);
}

double median(std::vector<double> values) {
    if (values.empty()) throw Error(ErrorKind::EmptyInput, "median of an empty sample");
    const std::size_t mid = values.size() / 2;
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
    const double upper = values[mid];
    if (values.size() % 2 == 1) return upper;
    const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lower + upper);
}

std::vector<double> ranks(std::span<const double> values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> out(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) out[order[k]] = avg;
        i = j + 1;
    }
    return out;
}

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw Error(ErrorKind::DimensionMismatch, "correlation inputs differ in length");
    if (a.size() < 2) throw Error(ErrorKind::EmptyInput, "correlation needs two observations");
    const double ma = mean(a);
    const double mb = mean(b);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

double spearman(std::span<const double> a, std::span<const double> b) {
    const auto ra = ranks(a);
    const auto rb = ranks(b);
    return pearson(ra, rb);
}

}  // namespace wprocova::stats
