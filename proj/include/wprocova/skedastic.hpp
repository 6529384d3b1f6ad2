// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "wprocova/regress.hpp"

#include <cstddef>
#include <utility>

namespace wprocova {

/// Squared residuals below this floor are clamped before taking logs.
inline constexpr double kSquaredResidualFloor = 1e-150;
/// Minimum sample variance of log s^2 for the slope to be identifiable.
inline constexpr double kMinTwinVarianceDispersion = 1e-12;

/// Fitted skedastic model log(e_i^2) = gamma0 + gamma1 * log(s_i^2) + noise and
/// the participant variances it implies.
struct SkedasticFit {
    double gamma0 = 0.0;
    double gamma1 = 0.0;
    Vector weights;       // 1 / sigma2_hat_i
    Vector sigma2_hat_i;  // exp(gamma0) * (s_i^2)^gamma1
    double r_squared = 0.0;
    std::size_t clamped_count = 0;
    double gamma1_std_error = 0.0;  // classical OLS standard error of gamma1
};

struct DiagnosticsReport {
    double heteroskedasticity_pvalue = 1.0;
    double twin_variance_dispersion = 0.0;
    double weight_residual_association = 0.0;
    bool negative_gamma1 = false;
};

SkedasticFit fit_skedastic(const Vector& log_s2, const Vector& residuals);

/// Skedastic fit whose coefficients are given rather than estimated.
SkedasticFit skedastic_from_coefficients(double gamma0, double gamma1, const Vector& log_s2);

/// Two-step feasible weighted least squares. Starts from OLS (gamma = 0) and
/// performs `iterations` rounds of (fit skedastic model on current residuals,
/// refit the mean model by WLS). Returns the last skedastic fit together with
/// the mean-model fit that used it.
std::pair<SkedasticFit, RegressionFit> iterate_weights(const DesignMatrix& V, const Vector& y,
                                                       const Vector& log_s2, int iterations = 1);

DiagnosticsReport diagnostics(const SkedasticFit& fit, const Vector& residuals, const Vector& log_s2);

}  // namespace wprocova
