// SPDX-License-Identifier: Apache-2.0
#include "wprocova/estimators.hpp"

#include "wprocova/error.hpp"
#include "wprocova/stats.hpp"

#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace wprocova {

namespace {

struct Prepared {
    TrialData data;
    std::size_t dropped = 0;
};

void check_covariates(const TrialData& data, bool need_score, bool need_twin) {
    const auto n = static_cast<Eigen::Index>(data.size());
    if (n == 0) throw Error(ErrorKind::EmptyInput, "no participants");
    if (data.outcome.size() != n) throw Error(ErrorKind::DimensionMismatch, "outcome length differs from treatment");
    if (need_score && data.prognostic_score.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "prognostic score length differs from treatment");
    }
    if (need_twin && data.twin_variance.size() != n) {
        throw Error(ErrorKind::DimensionMismatch, "twin variance length differs from treatment");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        const int w = data.treatment[static_cast<std::size_t>(i)];
        if (w != 0 && w != 1) {
            throw Error(ErrorKind::InvalidArgument, "treatment must be 0 or 1 (row " + std::to_string(i) + ")");
        }
        if (std::isinf(data.outcome(i))) {
            throw Error(ErrorKind::InvalidArgument, "outcome is infinite (row " + std::to_string(i) + ")");
        }
        if (need_score && !std::isfinite(data.prognostic_score(i))) {
            throw Error(ErrorKind::MissingCovariate, "prognostic score missing (row " + std::to_string(i) + ")");
        }
        if (need_twin) {
            const double s2 = data.twin_variance(i);
            if (std::isnan(s2)) {
                throw Error(ErrorKind::MissingCovariate, "twin variance missing (row " + std::to_string(i) + ")");
            }
            if (!(s2 > 0.0) || std::isinf(s2)) {
                throw Error(ErrorKind::NonPositiveTwinVariance,
                            "twin variance must be positive and finite (row " + std::to_string(i) + ")");
            }
        }
    }
}

void check_arms(const TrialData& data) {
    std::size_t treated = 0;
    for (int w : data.treatment) treated += static_cast<std::size_t>(w == 1);
    const std::size_t control = data.size() - treated;
    if (treated < 2 || control < 2) {
        throw Error(ErrorKind::SingleArm, "each arm needs at least 2 participants with observed outcomes (treated " +
                                              std::to_string(treated) + ", control " + std::to_string(control) + ")");
    }
}

Prepared prepare(const TrialData& data, bool need_score, bool need_twin) {
    check_covariates(data, need_score, need_twin);
    auto [kept, dropped] = drop_missing_outcomes(data);
    check_arms(kept);
    return {std::move(kept), dropped};
}

void check_alpha(double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
}

}  // namespace

void TrialData::validate() const {
    check_covariates(*this, true, true);
    check_arms(*this);
}

Vector TrialData::log_twin_variance() const {
    return twin_variance.array().log().matrix();
}

std::pair<TrialData, std::size_t> drop_missing_outcomes(const TrialData& data) {
    const auto n = static_cast<Eigen::Index>(data.size());
    std::vector<Eigen::Index> keep;
    keep.reserve(data.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!std::isnan(data.outcome(i))) keep.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(keep.size());
    TrialData out;
    out.treatment.resize(keep.size());
    out.outcome.resize(m);
    const bool has_score = data.prognostic_score.size() == n;
    const bool has_twin = data.twin_variance.size() == n;
    if (has_score) out.prognostic_score.resize(m);
    if (has_twin) out.twin_variance.resize(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::Index i = keep[static_cast<std::size_t>(j)];
        out.treatment[static_cast<std::size_t>(j)] = data.treatment[static_cast<std::size_t>(i)];
        out.outcome(j) = data.outcome(i);
        if (has_score) out.prognostic_score(j) = data.prognostic_score(i);
        if (has_twin) out.twin_variance(j) = data.twin_variance(i);
    }
    return {std::move(out), data.size() - keep.size()};
}

std::string_view to_string(Method method) noexcept {
    switch (method) {
        case Method::Unadjusted: return "unadjusted";
        case Method::Procova: return "procova";
        case Method::WeightedProcova: return "weighted_procova";
    }
    return "unknown";
}

Method method_from_string(std::string_view name) {
    if (name == "unadjusted") return Method::Unadjusted;
    if (name == "procova") return Method::Procova;
    if (name == "weighted_procova" || name == "weighted-procova" || name == "wprocova") return Method::WeightedProcova;
    throw Error(ErrorKind::InvalidArgument, "unknown method '" + std::string(name) + "'");
}

DesignMatrix treatment_design(const TrialData& data, bool with_prognostic_score) {
    const auto n = static_cast<Eigen::Index>(data.size());
    const bool flat_score = with_prognostic_score && n > 0 &&
                            (data.prognostic_score.array() == data.prognostic_score(0)).all();
    const bool use_score = with_prognostic_score && !flat_score;
    Matrix V(n, use_score ? 3 : 2);
    V.col(0).setOnes();
    for (Eigen::Index i = 0; i < n; ++i) V(i, 1) = data.treatment[static_cast<std::size_t>(i)];
    if (use_score) V.col(2) = data.prognostic_score;
    return DesignMatrix(std::move(V));
}

AnalysisResult infer_treatment_effect(Method method, const RegressionFit& fit, const DesignMatrix& V,
                                      const InferenceOptions& options) {
    check_alpha(options.alpha);
    const SandwichCovariance cov = hc_covariance(fit, V, HcFlavor::HC1);

    AnalysisResult r;
    r.method = method;
    r.n_used = static_cast<std::size_t>(V.rows());
    r.effect_estimate = fit.beta_hat(1);
    r.hc1_variance = std::max(cov.matrix(1, 1), 0.0);

    const double df = static_cast<double>(V.rows() - V.cols());
    const double q = 1.0 - options.alpha / 2.0;
    const double crit = options.reference == Reference::Normal ? stats::normal_quantile(q)
                                                               : stats::student_t_quantile(q, df);
    const double se = std::sqrt(r.hc1_variance);
    if (se > 0.0) {
        r.test_statistic = r.effect_estimate / se;
        const double tail = options.reference == Reference::Normal
                                ? stats::normal_cdf(-std::abs(r.test_statistic))
                                : stats::student_t_cdf(-std::abs(r.test_statistic), df);
        r.p_value = std::clamp(2.0 * tail, 0.0, 1.0);
    } else if (std::abs(r.effect_estimate) <=
               64.0 * std::numeric_limits<double>::epsilon() * fit.fitted.cwiseAbs().maxCoeff()) {
        // No residual scatter and no difference beyond rounding.
        r.test_statistic = 0.0;
        r.p_value = 1.0;
    } else {
        r.test_statistic = std::copysign(std::numeric_limits<double>::infinity(), r.effect_estimate);
        r.p_value = 0.0;
    }
    r.ci_low = r.effect_estimate - crit * se;
    r.ci_high = r.effect_estimate + crit * se;
    return r;
}

AnalysisResult analyze_unadjusted(const TrialData& data, const InferenceOptions& options) {
    const Prepared p = prepare(data, false, false);
    const DesignMatrix V = treatment_design(p.data, false);
    return infer_treatment_effect(Method::Unadjusted, fit_ols(V, p.data.outcome), V, options);
}

AnalysisResult analyze_procova(const TrialData& data, const InferenceOptions& options) {
    const Prepared p = prepare(data, true, false);
    const DesignMatrix V = treatment_design(p.data, true);
    return infer_treatment_effect(Method::Procova, fit_ols(V, p.data.outcome), V, options);
}

AnalysisResult analyze_weighted_procova(const TrialData& data, const InferenceOptions& options, int iterations) {
    const Prepared p = prepare(data, true, true);
    const DesignMatrix V = treatment_design(p.data, true);
    auto [sked, fit] = iterate_weights(V, p.data.outcome, p.data.log_twin_variance(), iterations);
    AnalysisResult r = infer_treatment_effect(Method::WeightedProcova, fit, V, options);
    r.skedastic = std::move(sked);
    return r;
}

AnalysisResult analyze_weighted_fixed(const TrialData& data, double gamma0, double gamma1,
                                      const InferenceOptions& options) {
    const Prepared p = prepare(data, true, true);
    const DesignMatrix V = treatment_design(p.data, true);
    SkedasticFit sked = skedastic_from_coefficients(gamma0, gamma1, p.data.log_twin_variance());
    const RegressionFit fit = fit_wls(V, p.data.outcome, sked.sigma2_hat_i);
    AnalysisResult r = infer_treatment_effect(Method::WeightedProcova, fit, V, options);
    r.skedastic = std::move(sked);
    return r;
}

AnalysisResult analyze_weighted_procova_or_fallback(const TrialData& data, const InferenceOptions& options,
                                                    int iterations) {
    try {
        return analyze_weighted_procova(data, options, iterations);
    } catch (const Error& e) {
        if (e.kind() != ErrorKind::DegenerateTwinVariance) throw;
    }
    AnalysisResult r = analyze_weighted_fixed(data, 0.0, 0.0, options);
    r.fallback = true;
    return r;
}

double pct_variance_reduction(double baseline_var, double candidate_var) {
    if (!(baseline_var > 0.0)) {
        throw Error(ErrorKind::NonPositiveVariance, "baseline variance must be positive for a percentage reduction");
    }
    return 100.0 * (1.0 - candidate_var / baseline_var);
}

ComparisonTable compare_methods(const std::vector<AnalysisResult>& results, std::size_t baseline) {
    if (results.empty()) throw Error(ErrorKind::EmptyInput, "nothing to compare");
    if (baseline >= results.size()) throw Error(ErrorKind::InvalidArgument, "baseline index out of range");
    const AnalysisResult& base = results[baseline];
    ComparisonTable table{base.method, {}};
    for (const auto& r : results) {
        if (r.n_used != base.n_used) {
            throw Error(ErrorKind::MixedData, "results were fitted to different data (n_used " +
                                                  std::to_string(r.n_used) + " vs " + std::to_string(base.n_used) +
                                                  ")");
        }
        table.rows.push_back(
            {r.method, r.effect_estimate, r.hc1_variance, pct_variance_reduction(base.hc1_variance, r.hc1_variance)});
    }
    return table;
}

double two_sided_power(double delta, double alpha) {
    const double z = stats::normal_quantile(1.0 - alpha / 2.0);
    return stats::normal_cdf(delta - z) + stats::normal_cdf(-delta - z);
}

PowerPair prospective_power(double baseline_var, double candidate_var, double effect, double alpha,
                            double baseline_power) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidPower, "alpha must lie in (0, 1)");
    if (!(baseline_var > 0.0) || !(candidate_var > 0.0) || !std::isfinite(baseline_var) ||
        !std::isfinite(candidate_var)) {
        throw Error(ErrorKind::InvalidPower, "variances must be positive and finite");
    }
    if (!std::isfinite(effect)) throw Error(ErrorKind::InvalidPower, "effect must be finite");
    if (effect == 0.0) return {alpha, alpha};
    if (!(baseline_power > alpha && baseline_power < 1.0)) {
        throw Error(ErrorKind::InvalidPower, "baseline power must lie in (alpha, 1) for a nonzero effect");
    }

    // Standardized effect giving the baseline power; the power curve is
    // increasing in delta >= 0, so a bracketing solver is enough.
    const auto gap = [&](double d) { return two_sided_power(d, alpha) - baseline_power; };
    double hi = 1.0;
    while (gap(hi) < 0.0) hi *= 2.0;
    std::uintmax_t iters = 200;
    const auto bracket = boost::math::tools::toms748_solve(gap, 0.0, hi, boost::math::tools::eps_tolerance<double>(52),
                                                           iters);
    const double delta_base = 0.5 * (bracket.first + bracket.second);
    const double delta_candidate = delta_base * std::sqrt(baseline_var / candidate_var);
    const double candidate = baseline_var == candidate_var ? baseline_power : two_sided_power(delta_candidate, alpha);
    return {baseline_power, candidate};
}

}  // namespace wprocova
