// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "wprocova/estimators.hpp"

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wprocova::sim {

enum class Scenario {
    FixedTotal,     // psi^2 = kTotalHeteroskedasticity - gamma1^2 tau2^2
    Deterministic,  // psi^2 = 0
    FixedNoise,     // psi^2 = 1
};

std::string_view to_string(Scenario s) noexcept;
Scenario scenario_from_string(std::string_view name);

/// Var{log sigma^2} held fixed across cells under Scenario::FixedTotal.
inline constexpr double kTotalHeteroskedasticity = 4.0;

struct SimulationConfig {
    std::size_t n = 300;
    double beta0 = 0.0;
    double beta1 = 0.0;
    double beta2 = 0.4;
    double gamma0 = -1.75;
    double gamma1 = 1.0;
    double gamma2 = 0.0;
    double tau1_sq = 1.0;
    double tau2_sq = 0.5;
    double tau3_sq = 1.0;
    Scenario scenario = Scenario::FixedTotal;
    std::size_t replications = 10000;
    std::uint64_t seed = 20240101;
    double alpha = 0.05;
    int iterations = 1;

    std::size_t n_treated() const noexcept { return n / 2; }
    /// Noise variance of log sigma^2 implied by the scenario.
    double psi_sq() const;
    /// Throws InvalidScenarioParams / InvalidArgument on unusable settings.
    void validate() const;
};

/// Parameter defaults of the three heteroskedasticity settings (1, 2 or 3).
SimulationConfig setting(int index);

/// One generated trial together with the true participant variances.
struct GeneratedTrial {
    TrialData data;
    Vector sigma2;
};

/// Draws replication `replication` of a cell. `cell_key` is the RNG key of the
/// cell; see cell_key().
GeneratedTrial generate_trial(const SimulationConfig& config, std::uint64_t cell_key, std::uint64_t replication);

/// RNG key for cell `cell_index` of a run seeded with `seed`.
std::uint64_t cell_key(std::uint64_t seed, std::uint64_t cell_index);

struct MethodSummary {
    Method method = Method::Unadjusted;
    double bias = 0.0;            // mean(beta1_hat) - beta1
    double estimate_sd = 0.0;     // empirical SD of beta1_hat
    double rejection_rate = 0.0;  // Type I error when beta1 = 0, power otherwise
    double coverage = 0.0;
    double mean_hc1_variance = 0.0;
};

struct SimulationMetrics {
    std::array<MethodSummary, 3> methods{};  // unadjusted, PROCOVA, Weighted PROCOVA
    std::size_t replications = 0;            // successful replications
    std::size_t failed_replications = 0;
    bool failed = false;                     // more than 1% of replications errored
    std::string failure;                     // first error message, if any

    // Weighted PROCOVA against PROCOVA, per replication from HC1 variances.
    double mean_pct_var_reduction = 0.0;
    double median_pct_var_reduction = 0.0;
    double pct_var_reduction_se = 0.0;
    double var_inflation_prob = 0.0;
    double mean_skedastic_r_squared = 0.0;
    double mean_gamma1_hat = 0.0;
    std::vector<double> pct_var_reduction;  // one entry per successful replication

    const MethodSummary& weighted() const { return methods[2]; }
    const MethodSummary& procova() const { return methods[1]; }
    const MethodSummary& unadjusted() const { return methods[0]; }

    // Headline Weighted PROCOVA metrics.
    double bias() const { return weighted().bias; }
    double type1_or_power() const { return weighted().rejection_rate; }
    double coverage() const { return weighted().coverage; }
};

inline constexpr std::size_t kMinReplications = 100;

/// Runs every replication of a cell through the three analyses. `threads`
/// only changes speed; results are identical for any value.
SimulationMetrics run_cell(const SimulationConfig& config, std::size_t threads = 1, std::uint64_t cell_index = 0);

struct GridRow {
    SimulationConfig config;
    SimulationMetrics metrics;
    std::optional<std::string> error;  // set when the cell could not run at all
};

/// Cell k of the grid is keyed by cell_key(grid[k].seed, k).
std::vector<GridRow> run_grid(const std::vector<SimulationConfig>& grid, std::size_t threads = 1);

inline constexpr std::size_t kMinSearchN = 10;
inline constexpr std::size_t kMaxSearchN = 1'000'000;

/// Estimated PROCOVA rejection rate of a cell (no weighted fits).
double procova_power(const SimulationConfig& config, std::size_t threads = 1);

/// Smallest even N whose simulated PROCOVA power reaches `target_power`.
/// Every probe reuses the same random streams, so the estimated power curve is
/// a smooth function of N. `reps_per_probe` overrides template replications.
std::size_t find_n_for_power(const SimulationConfig& config_template, double target_power,
                             std::size_t reps_per_probe = 2000, std::size_t threads = 1);

enum class Factor { Beta2, Gamma1, Gamma2, N };
enum class Metric { Bias, Type1OrPower, Coverage, MeanPctVarReduction };

std::string_view to_string(Factor f) noexcept;
std::string_view to_string(Metric m) noexcept;
Factor factor_from_string(std::string_view name);
Metric metric_from_string(std::string_view name);

struct MainEffect {
    double slope = 0.0;
    double std_error = 0.0;
    double p_value = 1.0;
    std::size_t cells = 0;
};

/// Slope of a Weighted PROCOVA metric regressed on one design factor across
/// grid cells, with its classical t-test.
MainEffect regression_on_metrics(const std::vector<GridRow>& rows, Factor factor, Metric metric);

/// Same, on raw (factor, metric) pairs.
MainEffect simple_main_effect(const std::vector<double>& factor, const std::vector<double>& metric);

}  // namespace wprocova::sim
