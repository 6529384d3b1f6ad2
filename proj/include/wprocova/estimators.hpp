// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "wprocova/regress.hpp"
#include "wprocova/skedastic.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wprocova {

/// Analysis input: one entry per participant. A NaN outcome marks a missing
/// response and is removed by case-wise deletion before any fit.
struct TrialData {
    std::vector<int> treatment;  // 0 = control, 1 = treated
    Vector outcome;
    Vector prognostic_score;     // m_i
    Vector twin_variance;        // s_i^2

    std::size_t size() const noexcept { return treatment.size(); }

    /// Checks lengths, labels, covariate completeness and s_i^2 > 0.
    void validate() const;
    Vector log_twin_variance() const;
};

/// Returns the data with missing outcomes removed and the number dropped.
std::pair<TrialData, std::size_t> drop_missing_outcomes(const TrialData& data);

enum class Method { Unadjusted, Procova, WeightedProcova };

std::string_view to_string(Method method) noexcept;
Method method_from_string(std::string_view name);

enum class Reference { Normal, StudentT };

struct InferenceOptions {
    double alpha = 0.05;
    /// Reference distribution for the HC1 test and interval. Normal by
    /// default; StudentT uses N - (M+1) degrees of freedom.
    Reference reference = Reference::Normal;
};

struct AnalysisResult {
    Method method = Method::Unadjusted;
    double effect_estimate = 0.0;
    double hc1_variance = 0.0;
    double test_statistic = 0.0;
    double p_value = 1.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t n_used = 0;
    std::optional<SkedasticFit> skedastic;
    /// Set when Weighted PROCOVA degraded to unit weights because the twin
    /// variances carried no spread.
    bool fallback = false;
};

/// Treatment-indicator inference from a fitted model: beta_1 with its HC1
/// variance, two-sided test of beta_1 = 0 and equal-tailed interval.
AnalysisResult infer_treatment_effect(Method method, const RegressionFit& fit, const DesignMatrix& V,
                                      const InferenceOptions& options);

AnalysisResult analyze_unadjusted(const TrialData& data, const InferenceOptions& options = {});
AnalysisResult analyze_procova(const TrialData& data, const InferenceOptions& options = {});
AnalysisResult analyze_weighted_procova(const TrialData& data, const InferenceOptions& options = {},
                                        int iterations = 1);

/// Weighted PROCOVA that degrades to gamma = (0, 0), and therefore to the
/// PROCOVA answer, when the twin variances are constant. Sets `fallback`.
AnalysisResult analyze_weighted_procova_or_fallback(const TrialData& data, const InferenceOptions& options = {},
                                                    int iterations = 1);

/// Weighted PROCOVA with a fixed skedastic model instead of an estimated one.
/// With gamma = (0, 0) this takes the same arithmetic path as PROCOVA.
AnalysisResult analyze_weighted_fixed(const TrialData& data, double gamma0, double gamma1,
                                      const InferenceOptions& options = {});

/// Mean-model design (1, w_i) or (1, w_i, m_i). A prognostic score that takes
/// a single value is absorbed by the intercept, so its column is left out.
DesignMatrix treatment_design(const TrialData& data, bool with_prognostic_score);

struct ComparisonRow {
    Method method;
    double effect_estimate;
    double hc1_variance;
    double pct_variance_reduction;  // 100 * (1 - var / var_baseline)
};

struct ComparisonTable {
    Method baseline;
    std::vector<ComparisonRow> rows;
};

double pct_variance_reduction(double baseline_var, double candidate_var);

/// Compares methods fitted to the same data against `results[baseline]`.
ComparisonTable compare_methods(const std::vector<AnalysisResult>& results, std::size_t baseline = 0);

struct PowerPair {
    double baseline_power;
    double candidate_power;
    double boost() const noexcept { return candidate_power - baseline_power; }
};

/// Two-sided power of a level-alpha z-test whose standardized effect is delta.
double two_sided_power(double delta, double alpha);

/// Calibrates the standardized effect so that a test with `baseline_var` has
/// `baseline_power`, then evaluates the same effect under `candidate_var`.
PowerPair prospective_power(double baseline_var, double candidate_var, double effect, double alpha,
                            double baseline_power);

}  // namespace wprocova
