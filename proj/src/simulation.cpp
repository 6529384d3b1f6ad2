// SPDX-License-Identifier: Apache-2.0
#include "wprocova/simulation.hpp"

#include "wprocova/error.hpp"
#include "wprocova/rng.hpp"
#include "wprocova/stats.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <set>
#include <string>
#include <thread>

namespace wprocova::sim {

namespace {

enum Stream : std::uint32_t {
    kPrognostic = 0,
    kLogTwinVariance = 1,
    kOmitted = 2,
    kNoise = 3,
    kError = 4,
    kAssignment = 5,
};

/// Calls body(i) for i in [0, count) on up to `threads` workers. Each index
/// is handled exactly once; callers store results by index.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& body) {
    threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(count, 1));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&, t] {
            const std::size_t begin = count * t / threads;
            const std::size_t end = count * (t + 1) / threads;
            for (std::size_t i = begin; i < end; ++i) body(i);
        });
    }
    for (auto& th : pool) th.join();
}

struct Replicate {
    bool ok = false;
    std::string error;
    std::array<double, 3> estimate{};
    std::array<double, 3> variance{};
    std::array<bool, 3> reject{};
    std::array<bool, 3> covered{};
    double pct = 0.0;
    double r_squared = 0.0;
    double gamma1 = 0.0;
};

Replicate run_replicate(const SimulationConfig& config, std::uint64_t key, std::uint64_t r) {
    Replicate out;
    try {
        const GeneratedTrial trial = generate_trial(config, key, r);
        InferenceOptions opts;
        opts.alpha = config.alpha;
        const std::array<AnalysisResult, 3> res = {
            analyze_unadjusted(trial.data, opts),
            analyze_procova(trial.data, opts),
            analyze_weighted_procova(trial.data, opts, config.iterations),
        };
        for (std::size_t k = 0; k < 3; ++k) {
            out.estimate[k] = res[k].effect_estimate;
            out.variance[k] = res[k].hc1_variance;
            out.reject[k] = res[k].p_value < config.alpha;
            out.covered[k] = res[k].ci_low <= config.beta1 && config.beta1 <= res[k].ci_high;
        }
        out.pct = pct_variance_reduction(res[1].hc1_variance, res[2].hc1_variance);
        out.r_squared = res[2].skedastic->r_squared;
        out.gamma1 = res[2].skedastic->gamma1;
        out.ok = true;
    } catch (const std::exception& e) {
        out.error = e.what();
    }
    return out;
}

double fraction(std::size_t hits, std::size_t total) {
    return static_cast<double>(hits) / static_cast<double>(total);
}

}  // namespace

std::string_view to_string(Scenario s) noexcept {
    switch (s) {
        case Scenario::FixedTotal: return "fixed_total";
        case Scenario::Deterministic: return "deterministic";
        case Scenario::FixedNoise: return "fixed_noise";
    }
    return "unknown";
}

Scenario scenario_from_string(std::string_view name) {
    if (name == "fixed_total" || name == "1") return Scenario::FixedTotal;
    if (name == "deterministic" || name == "2") return Scenario::Deterministic;
    if (name == "fixed_noise" || name == "3") return Scenario::FixedNoise;
    throw Error(ErrorKind::InvalidArgument, "unknown scenario '" + std::string(name) + "'");
}

double SimulationConfig::psi_sq() const {
    switch (scenario) {
        case Scenario::FixedTotal: {
            const double explained = gamma1 * gamma1 * tau2_sq;
            if (!(explained < kTotalHeteroskedasticity)) {
                throw Error(ErrorKind::InvalidScenarioParams,
                            "gamma1^2 * tau2_sq = " + std::to_string(explained) +
                                " must stay below the fixed total heteroskedasticity 4");
            }
            return kTotalHeteroskedasticity - explained;
        }
        case Scenario::Deterministic: return 0.0;
        case Scenario::FixedNoise: return 1.0;
    }
    return 0.0;
}

void SimulationConfig::validate() const {
    if (n < 8) throw Error(ErrorKind::InvalidArgument, "n must be at least 8");
    if (!(tau1_sq > 0.0) || !(tau2_sq > 0.0) || !(tau3_sq > 0.0)) {
        throw Error(ErrorKind::InvalidArgument, "tau1_sq, tau2_sq and tau3_sq must be positive");
    }
    if (!(alpha > 0.0 && alpha < 1.0)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
    if (iterations < 1) throw Error(ErrorKind::InvalidArgument, "iterations must be at least 1");
    for (double v : {beta0, beta1, beta2, gamma0, gamma1, gamma2}) {
        if (!std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "model coefficients must be finite");
    }
    (void)psi_sq();
}

SimulationConfig setting(int index) {
    SimulationConfig c;
    switch (index) {
        case 1:
            c.scenario = Scenario::FixedTotal;
            c.gamma0 = -1.75;
            break;
        case 2:
            c.scenario = Scenario::Deterministic;
            c.gamma0 = 0.0;
            break;
        case 3:
            c.scenario = Scenario::FixedNoise;
            c.gamma0 = 0.0;
            break;
        default:
            throw Error(ErrorKind::InvalidArgument, "setting must be 1, 2 or 3");
    }
    return c;
}

std::uint64_t cell_key(std::uint64_t seed, std::uint64_t cell_index) {
    return mix_seed(seed, cell_index);
}

GeneratedTrial generate_trial(const SimulationConfig& config, std::uint64_t key, std::uint64_t replication) {
    config.validate();
    const std::size_t n = config.n;
    const auto ni = static_cast<Eigen::Index>(n);
    const double psi = std::sqrt(config.psi_sq());
    const double tau1 = std::sqrt(config.tau1_sq);
    const double tau2 = std::sqrt(config.tau2_sq);
    const double tau3 = std::sqrt(config.tau3_sq);

    CounterRng rng_m(key, kPrognostic, replication);
    CounterRng rng_l(key, kLogTwinVariance, replication);
    CounterRng rng_u(key, kOmitted, replication);
    CounterRng rng_z(key, kNoise, replication);
    CounterRng rng_e(key, kError, replication);
    CounterRng rng_w(key, kAssignment, replication);

    GeneratedTrial g;
    g.data.treatment = balanced_assignment(n, config.n_treated(), rng_w);
    g.data.outcome.resize(ni);
    g.data.prognostic_score.resize(ni);
    g.data.twin_variance.resize(ni);
    g.sigma2.resize(ni);
    for (Eigen::Index i = 0; i < ni; ++i) {
        const double m = tau1 * rng_m.normal();
        const double log_s2 = tau2 * rng_l.normal();
        const double u2 = tau3 * rng_u.normal();
        const double zeta = psi * rng_z.normal();
        const double log_sigma2 = config.gamma0 + config.gamma1 * log_s2 + config.gamma2 * u2 + zeta;
        const double sigma2 = std::exp(log_sigma2);
        const double eps = std::sqrt(sigma2) * rng_e.normal();
        const int w = g.data.treatment[static_cast<std::size_t>(i)];
        g.data.prognostic_score(i) = m;
        g.data.twin_variance(i) = std::exp(log_s2);
        g.data.outcome(i) = config.beta0 + config.beta1 * w + config.beta2 * m + eps;
        g.sigma2(i) = sigma2;
    }
    return g;
}

SimulationMetrics run_cell(const SimulationConfig& config, std::size_t threads, std::uint64_t cell_index) {
    config.validate();
    if (config.replications < kMinReplications) {
        throw Error(ErrorKind::InvalidArgument,
                    "a cell needs at least " + std::to_string(kMinReplications) + " replications");
    }
    const std::uint64_t key = cell_key(config.seed, cell_index);
    std::vector<Replicate> reps(config.replications);
    parallel_for(reps.size(), threads, [&](std::size_t r) { reps[r] = run_replicate(config, key, r); });

    SimulationMetrics m;
    std::array<std::vector<double>, 3> est, var;
    std::array<std::size_t, 3> rejected{}, covered{};
    std::vector<double> r2, g1;
    std::size_t inflated = 0;
    for (const Replicate& r : reps) {
        if (!r.ok) {
            if (m.failed_replications++ == 0) m.failure = r.error;
            continue;
        }
        for (std::size_t k = 0; k < 3; ++k) {
            est[k].push_back(r.estimate[k]);
            var[k].push_back(r.variance[k]);
            rejected[k] += r.reject[k];
            covered[k] += r.covered[k];
        }
        m.pct_var_reduction.push_back(r.pct);
        inflated += r.pct < 0.0;
        r2.push_back(r.r_squared);
        g1.push_back(r.gamma1);
    }
    m.replications = m.pct_var_reduction.size();
    m.failed = m.failed_replications * 100 > config.replications;
    if (m.replications < 2) {
        m.failed = true;
        return m;
    }

    const std::array<Method, 3> order = {Method::Unadjusted, Method::Procova, Method::WeightedProcova};
    for (std::size_t k = 0; k < 3; ++k) {
        MethodSummary& s = m.methods[k];
        s.method = order[k];
        s.bias = stats::mean(est[k]) - config.beta1;
        s.estimate_sd = std::sqrt(stats::sample_variance(est[k]));
        s.rejection_rate = fraction(rejected[k], m.replications);
        s.coverage = fraction(covered[k], m.replications);
        s.mean_hc1_variance = stats::mean(var[k]);
    }
    m.mean_pct_var_reduction = stats::mean(m.pct_var_reduction);
    m.median_pct_var_reduction = stats::median(m.pct_var_reduction);
    m.pct_var_reduction_se =
        std::sqrt(stats::sample_variance(m.pct_var_reduction) / static_cast<double>(m.replications));
    m.var_inflation_prob = fraction(inflated, m.replications);
    m.mean_skedastic_r_squared = stats::mean(r2);
    m.mean_gamma1_hat = stats::mean(g1);
    return m;
}

std::vector<GridRow> run_grid(const std::vector<SimulationConfig>& grid, std::size_t threads) {
    if (grid.empty()) throw Error(ErrorKind::EmptyInput, "simulation grid is empty");
    std::vector<GridRow> rows;
    rows.reserve(grid.size());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        GridRow row{grid[k], {}, std::nullopt};
        try {
            row.metrics = run_cell(grid[k], threads, k);
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

double procova_power(const SimulationConfig& config, std::size_t threads) {
    config.validate();
    if (config.replications < kMinReplications) {
        throw Error(ErrorKind::InvalidArgument, "power estimate needs at least 100 replications");
    }
    const std::uint64_t key = cell_key(config.seed, 0);
    // 1 = rejected, 0 = not rejected, -1 = analysis failed
    std::vector<int> outcome(config.replications, -1);
    parallel_for(outcome.size(), threads, [&](std::size_t r) {
        try {
            const GeneratedTrial trial = generate_trial(config, key, r);
            InferenceOptions opts;
            opts.alpha = config.alpha;
            outcome[r] = analyze_procova(trial.data, opts).p_value < config.alpha ? 1 : 0;
        } catch (const std::exception&) {
            outcome[r] = -1;
        }
    });
    std::size_t hits = 0, ok = 0;
    for (int o : outcome) {
        if (o < 0) continue;
        ++ok;
        hits += static_cast<std::size_t>(o);
    }
    if ((config.replications - ok) * 100 > config.replications) {
        throw Error(ErrorKind::InvalidArgument, "more than 1% of PROCOVA fits failed at n = " + std::to_string(config.n));
    }
    return fraction(hits, ok);
}

std::size_t find_n_for_power(const SimulationConfig& config_template, double target_power,
                             std::size_t reps_per_probe, std::size_t threads) {
    if (!(target_power > config_template.alpha && target_power < 1.0)) {
        throw Error(ErrorKind::InvalidArgument, "target power must lie in (alpha, 1)");
    }
    if (config_template.beta1 == 0.0) {
        throw Error(ErrorKind::InvalidArgument, "sample-size search needs a nonzero treatment effect");
    }
    SimulationConfig cfg = config_template;
    cfg.replications = reps_per_probe;
    const auto reaches = [&](std::size_t n) {
        cfg.n = n;
        return procova_power(cfg, threads) >= target_power;
    };

    std::size_t lo = kMinSearchN;
    if (reaches(lo)) return lo;
    std::size_t hi = 2 * lo;
    while (!reaches(hi)) {
        lo = hi;
        if (hi == kMaxSearchN) {
            throw Error(ErrorKind::Unattainable,
                        "target power not reached for any N up to " + std::to_string(kMaxSearchN));
        }
        hi = std::min(2 * hi, kMaxSearchN);
    }
    while (hi - lo > 2) {
        std::size_t mid = lo + (hi - lo) / 2;
        mid -= mid % 2;
        if (mid <= lo) mid = lo + 2;
        if (reaches(mid)) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return hi;
}

std::string_view to_string(Factor f) noexcept {
    switch (f) {
        case Factor::Beta2: return "beta2";
        case Factor::Gamma1: return "gamma1";
        case Factor::Gamma2: return "gamma2";
        case Factor::N: return "n";
    }
    return "unknown";
}

std::string_view to_string(Metric m) noexcept {
    switch (m) {
        case Metric::Bias: return "bias";
        case Metric::Type1OrPower: return "type1_or_power";
        case Metric::Coverage: return "coverage";
        case Metric::MeanPctVarReduction: return "mean_pct_var_reduction";
    }
    return "unknown";
}

Factor factor_from_string(std::string_view name) {
    for (Factor f : {Factor::Beta2, Factor::Gamma1, Factor::Gamma2, Factor::N}) {
        if (to_string(f) == name) return f;
    }
    throw Error(ErrorKind::InvalidArgument, "unknown factor '" + std::string(name) + "'");
}

Metric metric_from_string(std::string_view name) {
    for (Metric m : {Metric::Bias, Metric::Type1OrPower, Metric::Coverage, Metric::MeanPctVarReduction}) {
        if (to_string(m) == name) return m;
    }
    throw Error(ErrorKind::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

MainEffect simple_main_effect(const std::vector<double>& factor, const std::vector<double>& metric) {
    if (factor.size() != metric.size()) throw Error(ErrorKind::DimensionMismatch, "factor and metric differ in length");
    const std::set<double> levels(factor.begin(), factor.end());
    if (levels.size() < 2) throw Error(ErrorKind::ConstantFactor, "factor takes fewer than 2 distinct levels");
    if (factor.size() < 3) throw Error(ErrorKind::InvalidArgument, "main effect needs at least 3 cells");

    MainEffect out;
    out.cells = factor.size();
    const auto [lo, hi] = std::minmax_element(metric.begin(), metric.end());
    if (*lo == *hi) return out;  // flat response: slope 0, p-value 1

    const auto n = static_cast<Eigen::Index>(factor.size());
    Matrix X(n, 2);
    Vector y(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        X(i, 1) = factor[static_cast<std::size_t>(i)];
        y(i) = metric[static_cast<std::size_t>(i)];
    }
    const Vector x = X.col(1);
    const RegressionFit fit = fit_ols(DesignMatrix(std::move(X)), y);
    const double sxx = (x.array() - x.mean()).square().sum();
    out.slope = fit.beta_hat(1);
    out.std_error = std::sqrt(fit.sigma2_hat / sxx);
    if (out.std_error > 0.0) {
        const double t = out.slope / out.std_error;
        out.p_value = std::clamp(2.0 * stats::student_t_cdf(-std::abs(t), static_cast<double>(n - 2)), 0.0, 1.0);
    } else {
        out.p_value = out.slope == 0.0 ? 1.0 : 0.0;
    }
    return out;
}

MainEffect regression_on_metrics(const std::vector<GridRow>& rows, Factor factor, Metric metric) {
    std::vector<double> xs, ys;
    for (const GridRow& row : rows) {
        if (row.error || row.metrics.failed) continue;
        const SimulationConfig& c = row.config;
        const SimulationMetrics& m = row.metrics;
        switch (factor) {
            case Factor::Beta2: xs.push_back(c.beta2); break;
            case Factor::Gamma1: xs.push_back(c.gamma1); break;
            case Factor::Gamma2: xs.push_back(c.gamma2); break;
            case Factor::N: xs.push_back(static_cast<double>(c.n)); break;
        }
        switch (metric) {
            case Metric::Bias: ys.push_back(m.bias()); break;
            case Metric::Type1OrPower: ys.push_back(m.type1_or_power()); break;
            case Metric::Coverage: ys.push_back(m.coverage()); break;
            case Metric::MeanPctVarReduction: ys.push_back(m.mean_pct_var_reduction); break;
        }
    }
    return simple_main_effect(xs, ys);
}

}  // namespace wprocova::sim
