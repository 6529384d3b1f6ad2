// SPDX-License-Identifier: Apache-2.0
#include "wprocova/skedastic.hpp"

#include "wprocova/error.hpp"
#include "wprocova/stats.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace wprocova {

namespace {

std::span<const double> as_span(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

void fill_variances(SkedasticFit& fit, const Vector& log_s2) {
    const auto n = log_s2.size();
    fit.sigma2_hat_i.resize(n);
    fit.weights.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double s2 = std::exp(fit.gamma0 + fit.gamma1 * log_s2(i));
        fit.sigma2_hat_i(i) = s2;
        fit.weights(i) = 1.0 / s2;
    }
}

}  // namespace

SkedasticFit fit_skedastic(const Vector& log_s2, const Vector& residuals) {
    const auto n = log_s2.size();
    if (n == 0 || residuals.size() == 0) {
        throw Error(ErrorKind::EmptyInput, "skedastic fit needs residuals and twin variances");
    }
    if (residuals.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "residual and log twin variance lengths differ");
    }
    if (n < 3) {
        throw Error(ErrorKind::EmptyInput, "skedastic fit needs at least 3 participants");
    }
    if (!log_s2.allFinite()) {
        throw Error(ErrorKind::InvalidArgument, "log twin variances must be finite");
    }
    if (stats::sample_variance(as_span(log_s2)) <= kMinTwinVarianceDispersion) {
        throw Error(ErrorKind::DegenerateTwinVariance,
                    "twin variances are constant; the skedastic slope is not identifiable");
    }

    SkedasticFit fit;
    Vector log_e2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        double e2 = residuals(i) * residuals(i);
        if (e2 < kSquaredResidualFloor) {
            e2 = kSquaredResidualFloor;
            ++fit.clamped_count;
        }
        log_e2(i) = std::log(e2);
    }

    Matrix U(n, 2);
    U.col(0).setOnes();
    U.col(1) = log_s2;
    const DesignMatrix design(std::move(U));
    const RegressionFit reg = fit_ols(design, log_e2);
    fit.gamma0 = reg.beta_hat(0);
    fit.gamma1 = reg.beta_hat(1);

    const double centre = log_e2.mean();
    const double sst = (log_e2.array() - centre).square().sum();
    const double ssr = reg.residuals.squaredNorm();
    fit.r_squared = sst > 0.0 ? std::clamp(1.0 - ssr / sst, 0.0, 1.0) : 0.0;

    const double sxx = (log_s2.array() - log_s2.mean()).square().sum();
    fit.gamma1_std_error = std::sqrt(reg.sigma2_hat / sxx);

    fill_variances(fit, log_s2);
    return fit;
}

SkedasticFit skedastic_from_coefficients(double gamma0, double gamma1, const Vector& log_s2) {
    SkedasticFit fit;
    fit.gamma0 = gamma0;
    fit.gamma1 = gamma1;
    fill_variances(fit, log_s2);
    return fit;
}

std::pair<SkedasticFit, RegressionFit> iterate_weights(const DesignMatrix& V, const Vector& y,
                                                       const Vector& log_s2, int iterations) {
    if (iterations < 1) {
        throw Error(ErrorKind::InvalidArgument, "iterations must be at least 1");
    }
    RegressionFit mean_fit = fit_ols(V, y);
    SkedasticFit sked;
    for (int t = 0; t < iterations; ++t) {
        sked = fit_skedastic(log_s2, mean_fit.residuals);
        mean_fit = fit_wls(V, y, sked.sigma2_hat_i);
    }
    return {std::move(sked), std::move(mean_fit)};
}

DiagnosticsReport diagnostics(const SkedasticFit& fit, const Vector& residuals, const Vector& log_s2) {
    const auto n = log_s2.size();
    if (residuals.size() != n || fit.weights.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "diagnostics inputs differ in length");
    }
    if (n < 3) {
        throw Error(ErrorKind::EmptyInput, "diagnostics need at least 3 participants");
    }

    DiagnosticsReport report;
    const double df = static_cast<double>(n - 2);
    if (fit.gamma1_std_error > 0.0) {
        const double t = fit.gamma1 / fit.gamma1_std_error;
        report.heteroskedasticity_pvalue = std::clamp(2.0 * stats::student_t_cdf(-std::abs(t), df), 0.0, 1.0);
    } else {
        // Zero residual scatter: exact relation if anything was explained, none otherwise.
        report.heteroskedasticity_pvalue = fit.r_squared > 0.0 ? 0.0 : 1.0;
    }
    report.twin_variance_dispersion = stats::sample_variance(as_span(log_s2));

    std::vector<double> e2(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) e2[static_cast<std::size_t>(i)] = residuals(i) * residuals(i);
    report.weight_residual_association = stats::spearman(as_span(fit.weights), e2);
    report.negative_gamma1 = fit.gamma1 < 0.0;
    return report;
}

}  // namespace wprocova
