// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "wprocova/regress.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

namespace wprocova::theory {

/// Exact conditional moments of OLS residuals e = (I - H) eps with
/// eps ~ N(0, diag(sigma2)).
struct ResidualMoments {
    Vector variances;    // Var(e_i)
    Matrix covariances;  // Cov(e_i, e_j), diagonal equal to `variances`
    Vector log_sq_means; // E log(e_i^2)
    double log_sq_variance = 0.0;

    /// Cov(e_i^2, e_j^2) = 2 Cov(e_i, e_j)^2 for jointly normal residuals.
    Matrix squared_covariances() const;
    /// Correlation matrix of the standardized residuals Z_i = e_i / sd(e_i).
    Matrix z_correlation() const;
};

ResidualMoments residual_moments(const DesignMatrix& V, const Vector& sigma2);

/// Var(e_i) only, in O(N cols^2) without forming H.
Vector residual_variances(const DesignMatrix& V, const Vector& sigma2);

struct GammaPair {
    double gamma0 = 0.0;
    double gamma1 = 0.0;
};

/// First-iteration expectation of the skedastic coefficients given the design,
/// the twin variances and the true participant variances.
GammaPair expected_gamma(const DesignMatrix& V, const Vector& log_s2, const Vector& sigma2);

/// Smallest eigenvalue of the Z correlation matrix tolerated (and clipped to 0).
inline constexpr double kEigenClip = -1e-8;
inline constexpr std::size_t kMinGammaDraws = 10000;

/// Monte Carlo variances of the first-iteration skedastic coefficients. Draws
/// the correlated standardized residuals and evaluates the coefficient rows of
/// (U'U)^{-1} U' on log Z^2. Deterministic for a given seed.
GammaPair gamma_variance_mc(const DesignMatrix& V, const Vector& log_s2, const Vector& sigma2, std::size_t draws,
                            std::uint64_t seed);

/// Draws from the joint distribution of (w, m, s^2, sigma^2).
struct JointSample {
    Vector w;
    Vector m;
    Vector s2;
    Vector sigma2;
    std::size_t size() const noexcept { return static_cast<std::size_t>(w.size()); }
};

/// Large-sample limit of the fitted skedastic function, as a function of s^2.
using SkedasticLimit = std::function<double(double)>;

inline constexpr std::size_t kMinJointSample = 10000;

struct AsymptoticSandwich {
    Matrix omega_bread;  // E{ vv' / G }
    Matrix omega_meat;   // E{ sigma^2 vv' / G^2 }
    Matrix procova_cov;  // E{vv'}^{-1} E{sigma^2 vv'} E{vv'}^{-1}
    Matrix wprocova_cov; // bread^{-1} meat bread^{-1}

    /// Weighted over unweighted asymptotic variance of the treatment coefficient.
    double treatment_variance_ratio() const { return wprocova_cov(1, 1) / procova_cov(1, 1); }
};

AsymptoticSandwich asymptotic_sandwich(const JointSample& sample, const SkedasticLimit& G);

/// Asymptotic fractional variance reduction of Weighted PROCOVA against PROCOVA
/// when the mean-model predictors are uncorrelated with G and sigma^2:
/// 1 - E[sigma^2 / G^2] / (E[1/G]^2 E[sigma^2]).
double variance_reduction_eta(const JointSample& sample, const SkedasticLimit& G);

/// One generated design for the large-N convergence check.
struct DesignDraw {
    DesignMatrix V;
    Vector log_s2;
    Vector sigma2;
};

using DesignGenerator = std::function<DesignDraw(std::size_t n, std::uint64_t seed)>;

struct LimitRow {
    std::size_t n = 0;
    double mean_gamma0 = 0.0;
    double mean_gamma1 = 0.0;
    double se_gamma1 = 0.0;       // across designs
    double gap_gamma1 = 0.0;      // |mean_gamma1 - limit_gamma1|
};

struct LimitTable {
    GammaPair limit;  // from pooled moments of log S^2 and log H at the reference size
    std::vector<LimitRow> rows;
};

/// Evaluates expected_gamma on `designs_per_n` generated designs at each N of
/// an increasing grid and compares against the large-sample limit built from
/// moment estimates on designs of size `reference_n`.
LimitTable limit_check(const DesignGenerator& generator, const std::vector<std::size_t>& n_grid,
                             std::size_t designs_per_n, std::size_t reference_n, std::uint64_t seed);

/// Joint law used to exercise the asymptotic formulas: w ~ Bernoulli(1/2),
/// m ~ N(0, 1), log s^2 ~ N(0, tau2_sq) and
/// log sigma^2 = gamma0 + gamma1 log s^2 + zeta with zeta ~ N(0, psi_sq), all
/// independent. The mean-model predictors are independent of (s^2, sigma^2).
struct IndependenceParams {
    double gamma0 = 0.0;
    double gamma1 = 1.0;
    double tau2_sq = 0.5;
    double psi_sq = 1.0;
};

JointSample independence_sample(const IndependenceParams& params, std::size_t draws, std::uint64_t seed);

/// Designs V = (1, w, m) with exactly n/2 treated, paired with log s^2 and
/// sigma^2 drawn as in independence_sample.
DesignGenerator gaussian_design_generator(const IndependenceParams& params);

}  // namespace wprocova::theory
