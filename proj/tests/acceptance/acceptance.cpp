// SPDX-License-Identifier: Apache-2.0
// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include "oracles.hpp"
#include "test_support.hpp"

#include "wprocova/commands.hpp"
#include "wprocova/error.hpp"
#include "wprocova/estimators.hpp"
#include "wprocova/rng.hpp"
#include "wprocova/simulation.hpp"
#include "wprocova/skedastic.hpp"
#include "wprocova/stats.hpp"
#include "wprocova/theory.hpp"
#include "wprocova/trial_csv.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

using namespace wprocova;
namespace th = wprocova::theory;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::size_t threads() {
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

std::string fmt(const char* f, double a) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

// Every simulated cell, kept for the unbiasedness sweep.
struct CellRecord {
    std::string label;
    sim::SimulationMetrics metrics;
};
std::vector<CellRecord> g_cells;

sim::SimulationMetrics run_and_keep(const std::string& label, const sim::SimulationConfig& c) {
    sim::SimulationMetrics m = sim::run_cell(c, threads());
    g_cells.push_back({label, m});
    return m;
}

// Setting-1 gamma1 = 0 cell from criterion 3, reused by the identity sweep.
std::optional<sim::SimulationMetrics> g_setting1_flat;

// ---------------------------------------------------------------------------

Outcome null_operating_characteristics() {
    const auto start = std::chrono::steady_clock::now();
    double type1 = 0.0, coverage = 0.0, worst_bias = 0.0;
    int cells = 0;
    for (double b2 : {0.2, 0.4, 0.6})
        for (double g1 : {0.4, 1.0, 1.4}) {
            sim::SimulationConfig c = sim::setting(1);
            c.n = 300;
            c.beta1 = 0.0;
            c.beta2 = b2;
            c.gamma1 = g1;
            c.gamma2 = 0.0;
            c.replications = 2000;
            const auto m = run_and_keep("null b2=" + fmt("%.1f", b2) + " g1=" + fmt("%.1f", g1), c);
            type1 += m.type1_or_power();
            coverage += m.coverage();
            worst_bias = std::max(worst_bias, std::abs(m.bias()));
            ++cells;
        }
    type1 /= cells;
    coverage /= cells;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool ok = type1 >= 0.040 && type1 <= 0.065 && coverage >= 0.935 && coverage <= 0.960 && worst_bias <= 0.01 &&
                    secs < 600.0;
    return {ok, "type I " + fmt("%.4f", type1) + " in [0.040, 0.065], coverage " + fmt("%.4f", coverage) +
                    " in [0.935, 0.960], max |bias| " + fmt("%.4f", worst_bias) + " <= 0.01, runtime " +
                    fmt("%.1f", secs) + " s < 600 s"};
}

Outcome power_reproduction() {
    auto cell = [](double g1) {
        sim::SimulationConfig c = sim::setting(1);
        c.n = 250;
        c.beta1 = 0.4;
        c.beta2 = 0.4;
        c.gamma1 = g1;
        c.replications = 5000;
        return run_and_keep("power g1=" + fmt("%.1f", g1), c);
    };
    const auto m10 = cell(1.0);
    const auto m14 = cell(1.4);
    const double p10 = m10.procova().rejection_rate;
    const double p14 = m14.procova().rejection_rate;
    const double w14 = m14.weighted().rejection_rate;
    const double boost = m10.weighted().rejection_rate - p10;
    const bool ok = p10 >= 0.78 && p10 <= 0.82 && p14 >= 0.78 && p14 <= 0.82 && w14 >= 0.96 && w14 <= 0.995 &&
                    boost >= 0.08 && boost <= 0.13;
    return {ok, "PROCOVA power " + fmt("%.4f", p10) + " / " + fmt("%.4f", p14) + " in [0.78, 0.82], weighted at 1.4 " +
                    fmt("%.4f", w14) + " in [0.96, 0.995], boost at 1.0 " + fmt("%.4f", boost) + " in [0.08, 0.13]"};
}

Outcome variance_reduction_monotonicity() {
    bool monotone = true, flat = true;
    std::ostringstream detail;
    for (int s = 1; s <= 3; ++s) {
        std::vector<double> means;
        sim::SimulationMetrics zero;
        for (double g1 : {0.0, 0.4, 0.8, 1.4}) {
            sim::SimulationConfig c = sim::setting(s);
            c.n = 300;
            c.beta1 = 0.0;
            c.beta2 = 0.4;
            c.gamma1 = g1;
            c.replications = 2000;
            const auto m = run_and_keep("setting " + std::to_string(s) + " g1=" + fmt("%.1f", g1), c);
            if (g1 == 0.0) {
                zero = m;
                if (s == 1) g_setting1_flat = m;
            } else {
                means.push_back(m.mean_pct_var_reduction);
            }
        }
        const bool inc = means[0] < means[1] && means[1] < means[2];
        const double z = zero.mean_pct_var_reduction / zero.pct_var_reduction_se;
        const bool near_zero = std::abs(z) <= 3.0;
        monotone &= inc;
        flat &= near_zero;
        detail << "setting " << s << ": " << fmt("%.2f", means[0]) << " < " << fmt("%.2f", means[1]) << " < "
               << fmt("%.2f", means[2]) << (inc ? "" : " (not increasing)") << ", at gamma1=0 "
               << fmt("%.3f", zero.mean_pct_var_reduction) << " +- " << fmt("%.3f", zero.pct_var_reduction_se) << " ("
               << fmt("%.1f", z) << " SE" << (near_zero ? "" : ", outside 3 SE") << "); ";
    }
    return {monotone && flat, detail.str()};
}

Outcome residual_moment_oracle() {
    const th::DesignDraw d = th::gaussian_design_generator({})(8, 404);
    const th::ResidualMoments rm = th::residual_moments(d.V, d.sigma2);
    const Matrix H = hat_matrix(d.V);
    const Matrix M = Matrix::Identity(8, 8) - H;
    const Vector sd = d.sigma2.cwiseSqrt();
    const std::size_t draws = 1'000'000;

    auto draw = [&](CounterRng& rng, Vector& e) {
        Vector eps(8);
        for (Eigen::Index i = 0; i < 8; ++i) eps(i) = sd(i) * rng.normal();
        e = M * eps;
    };

    // Pass 1: means.
    Vector mean_e2 = Vector::Zero(8), mean_log = Vector::Zero(8);
    {
        CounterRng rng(404, 0, 0);
        Vector e;
        for (std::size_t r = 0; r < draws; ++r) {
            draw(rng, e);
            mean_e2 += e.cwiseAbs2();
            for (Eigen::Index i = 0; i < 8; ++i) mean_log(i) += std::log(e(i) * e(i));
        }
        mean_e2 /= static_cast<double>(draws);
        mean_log /= static_cast<double>(draws);
    }
    // Pass 2: centred products on the same draws.
    Matrix s_cov = Matrix::Zero(8, 8), s_cov2 = Matrix::Zero(8, 8);
    Matrix q_cov = Matrix::Zero(8, 8), q_cov2 = Matrix::Zero(8, 8);
    Vector s_log2 = Vector::Zero(8), s_log4 = Vector::Zero(8);
    {
        CounterRng rng(404, 0, 0);
        Vector e;
        for (std::size_t r = 0; r < draws; ++r) {
            draw(rng, e);
            const Vector c2 = e.cwiseAbs2() - mean_e2;
            for (Eigen::Index i = 0; i < 8; ++i) {
                const double dl = std::log(e(i) * e(i)) - mean_log(i);
                s_log2(i) += dl * dl;
                s_log4(i) += dl * dl * dl * dl;
                for (Eigen::Index j = i; j < 8; ++j) {
                    const double p = e(i) * e(j);
                    const double p2 = c2(i) * c2(j);
                    s_cov(i, j) += p;
                    q_cov(i, j) += p * p;
                    s_cov2(i, j) += p2;
                    q_cov2(i, j) += p2 * p2;
                }
            }
        }
    }
    const double D = static_cast<double>(draws);
    const Matrix sq = rm.squared_covariances();
    int checks = 0, outside = 0;
    double worst = 0.0;
    auto compare = [&](double est, double want, double se) {
        const double z = std::abs(est - want) / se;
        worst = std::max(worst, z);
        ++checks;
        outside += z > 3.0;
    };
    for (Eigen::Index i = 0; i < 8; ++i) {
        for (Eigen::Index j = i; j < 8; ++j) {
            const double c = s_cov(i, j) / D;
            compare(c, rm.covariances(i, j), std::sqrt((q_cov(i, j) / D - c * c) / D));
            const double c2 = s_cov2(i, j) / D;
            compare(c2, sq(i, j), std::sqrt((q_cov2(i, j) / D - c2 * c2) / D));
        }
        compare(mean_log(i), std::log(rm.variances(i)) - stats::kLogChiSqMeanShift, std::sqrt(s_log2(i) / D / D));
        const double v = s_log2(i) / D;
        compare(v, stats::kLogChiSqVariance, std::sqrt((s_log4(i) / D - v * v) / D));
    }
    return {outside == 0, std::to_string(checks) + " moments (Cov(e), Cov(e^2), mean and variance of log e^2) from " +
                              "1e6 draws, max deviation " + fmt("%.2f", worst) + " SE, " + std::to_string(outside) +
                              " beyond 3 SE"};
}

Outcome expected_gamma_oracle() {
    const th::DesignDraw d = th::gaussian_design_generator({})(20, 505);
    const th::GammaPair want = th::expected_gamma(d.V, d.log_s2, d.sigma2);
    const std::size_t draws = 100'000;
    std::vector<double> g0(draws), g1(draws);
    CounterRng rng(505, 0, 0);
    Vector eps(20);
    for (std::size_t r = 0; r < draws; ++r) {
        for (Eigen::Index i = 0; i < 20; ++i) eps(i) = std::sqrt(d.sigma2(i)) * rng.normal();
        const SkedasticFit f = fit_skedastic(d.log_s2, fit_ols(d.V, eps).residuals);
        g0[r] = f.gamma0;
        g1[r] = f.gamma1;
    }
    const double se0 = std::sqrt(stats::sample_variance(g0) / static_cast<double>(draws));
    const double se1 = std::sqrt(stats::sample_variance(g1) / static_cast<double>(draws));
    const double z0 = (stats::mean(g0) - want.gamma0) / se0;
    const double z1 = (stats::mean(g1) - want.gamma1) / se1;
    return {std::abs(z0) <= 3.0 && std::abs(z1) <= 3.0,
            "gamma0 " + fmt("%.4f", stats::mean(g0)) + " vs " + fmt("%.4f", want.gamma0) + " (" + fmt("%.2f", z0) +
                " SE), gamma1 " + fmt("%.4f", stats::mean(g1)) + " vs " + fmt("%.4f", want.gamma1) + " (" +
                fmt("%.2f", z1) + " SE)"};
}

Outcome weighted_unbiasedness() {
    int bad = 0;
    double worst = 0.0;
    std::string worst_label;
    for (const auto& c : g_cells) {
        const auto& w = c.metrics.weighted();
        const double z = std::abs(w.bias) / (w.estimate_sd / std::sqrt(static_cast<double>(c.metrics.replications)));
        if (z > worst) {
            worst = z;
            worst_label = c.label;
        }
        bad += z >= 3.0;
    }
    return {bad == 0 && !g_cells.empty(), std::to_string(g_cells.size()) + " simulated cells, max |bias| " +
                                              fmt("%.2f", worst) + " MC SE (" + worst_label + "), " +
                                              std::to_string(bad) + " at or beyond 3 SE"};
}

Outcome variance_reduction_equivalence() {
    th::IndependenceParams p;  // gamma0 0, gamma1 1, tau2^2 0.5, psi^2 1
    const th::JointSample s = th::independence_sample(p, 1'000'000, 707);
    const auto G = [&](double s2) { return std::exp(p.gamma0 + p.gamma1 * std::log(s2)); };
    const double eta = 100.0 * th::variance_reduction_eta(s, G);
    const double sandwich = 100.0 * (1.0 - th::asymptotic_sandwich(s, G).treatment_variance_ratio());

    sim::SimulationConfig c = sim::setting(3);
    c.n = 1000;
    c.beta1 = 0.0;
    c.beta2 = 0.4;
    c.gamma0 = p.gamma0;
    c.gamma1 = p.gamma1;
    c.tau2_sq = p.tau2_sq;
    c.replications = 2000;
    const auto m = run_and_keep("fixed_noise N=1000 g1=1.0", c);
    const double simulated = m.mean_pct_var_reduction;
    const bool ok = std::abs(eta - sandwich) <= 0.5 && std::abs(simulated - eta) <= 3.0 &&
                    std::abs(simulated - sandwich) <= 3.0;
    return {ok, "closed form " + fmt("%.2f", eta) + "%, sandwich " + fmt("%.2f", sandwich) + "% (gap " +
                    fmt("%.3f", std::abs(eta - sandwich)) + " <= 0.5), simulation at N=1000 " +
                    fmt("%.2f", simulated) + "% (within 3)"};
}

Outcome sample_size_search() {
    sim::SimulationConfig c = sim::setting(1);
    c.beta1 = 0.4;
    c.beta2 = 0.4;
    c.gamma1 = 1.0;
    const std::size_t n = sim::find_n_for_power(c, 0.8, 2000, threads());
    return {n >= 220 && n <= 280, "N = " + std::to_string(n) + " in [220, 280]"};
}

Outcome case_study_arithmetic() {
    struct Entry {
        const char* label;
        double unadjusted, procova, weighted, boost_procova, boost_weighted;
    };
    // Published HC1 variances and power boosts (percentage points) of the three trials.
    const Entry rows[] = {
        {"DHA ADAS 6m", 0.32, 0.285, 0.272, 4.31, 5.91},      {"DHA ADAS 12m", 0.544, 0.496, 0.451, 3.45, 6.75},
        {"DHA ADAS 18m", 1.071, 0.98, 0.959, 3.39, 4.13},     {"DHA CDR 6m", 0.037, 0.035, 0.032, 2.11, 5.28},
        {"DHA CDR 12m", 0.063, 0.058, 0.053, 3.48, 6.43},     {"DHA CDR 18m", 0.111, 0.101, 0.101, 3.51, 3.59},
        {"RES ADAS 6m", 1.084, 1.048, 1.044, 1.32, 1.46},     {"RES ADAS 12m", 1.631, 1.367, 1.345, 6.41, 6.96},
        {"RES CDR 6m", 0.091, 0.089, 0.072, 1.12, 8.33},      {"RES CDR 12m", 0.21, 0.188, 0.148, 4.17, 11.67},
        {"VAL ADAS 6m", 0.607, 0.574, 0.577, 2.15, 1.99},     {"VAL ADAS 12m", 1.092, 1.14, 1.098, -1.69, -0.21},
        {"VAL ADAS 18m", 1.742, 1.632, 1.624, 2.48, 2.66},    {"VAL ADAS 24m", 2.601, 2.649, 2.642, -0.72, -0.62},
        {"VAL CDR 6m", 0.065, 0.064, 0.063, 0.67, 1.01},      {"VAL CDR 12m", 0.137, 0.134, 0.13, 0.96, 2.27},
        {"VAL CDR 18m", 0.249, 0.242, 0.235, 0.98, 2.08},     {"VAL CDR 24m", 0.267, 0.251, 0.248, 2.39, 2.73},
    };
    int checks = 0, bad = 0;
    double worst = 0.0;
    std::string worst_label;
    auto compare = [&](const std::string& label, double got, double want) {
        const double gap = std::abs(got - want);
        ++checks;
        bad += gap > 0.5;
        if (gap > worst) {
            worst = gap;
            worst_label = label;
        }
    };
    for (const Entry& e : rows) {
        auto result = [](Method m, double v) {
            AnalysisResult r;
            r.method = m;
            r.hc1_variance = v;
            r.n_used = 1;
            return r;
        };
        const ComparisonTable t = compare_methods({result(Method::Unadjusted, e.unadjusted),
                                                   result(Method::Procova, e.procova),
                                                   result(Method::WeightedProcova, e.weighted)});
        if (t.rows[1].pct_variance_reduction != pct_variance_reduction(e.unadjusted, e.procova)) ++bad;
        compare(std::string(e.label) + " PROCOVA",
                100.0 * prospective_power(e.unadjusted, e.procova, 1.0, 0.05, 0.8).boost(), e.boost_procova);
        compare(std::string(e.label) + " weighted",
                100.0 * prospective_power(e.unadjusted, e.weighted, 1.0, 0.05, 0.8).boost(), e.boost_weighted);
    }
    compare("reduction 1.071 -> 0.959", pct_variance_reduction(1.071, 0.959), 10.46);
    compare("reduction 0.544 -> 0.451", pct_variance_reduction(0.544, 0.451), 17.10);
    return {bad == 0, std::to_string(checks) + " published boosts and reductions, max gap " + fmt("%.3f", worst) +
                          " points (" + worst_label + "), " + std::to_string(bad) + " beyond 0.5"};
}

// ---------------------------------------------------------------------------

struct Identity {
    std::string name;
    std::function<bool()> check;
};

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "wprocova_acceptance";
    fs::create_directories(dir);
    return dir / name;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

template <class F>
bool raises(ErrorKind kind, F&& f, const std::string& needle = "") {
    try {
        f();
    } catch (const Error& e) {
        return e.kind() == kind && std::string(e.what()).find(needle) != std::string::npos;
    }
    return false;
}

TrialData tiny_trial(std::vector<int> w, std::vector<double> y) {
    TrialData d;
    const auto n = static_cast<Eigen::Index>(w.size());
    d.treatment = std::move(w);
    d.outcome = support::to_vector(y);
    d.prognostic_score = Vector::LinSpaced(n, -1.0, 1.0);
    d.twin_variance = Vector::LinSpaced(n, 0.5, 2.0);
    return d;
}

std::vector<Identity> identities() {
    std::vector<Identity> out;
    auto add = [&](std::string name, std::function<bool()> f) { out.push_back({std::move(name), std::move(f)}); };

    add("exact fit has zero residuals", [] {
        Matrix x(5, 2);
        x << 1, 0, 1, 1, 1, 2, 1, 3, 1, 4;
        const Vector y = 3.0 * x.col(0) - 0.5 * x.col(1);
        const RegressionFit f = fit_ols(DesignMatrix(x), y);
        return f.residuals.cwiseAbs().maxCoeff() == 0.0 && (f.fitted - y).cwiseAbs().maxCoeff() < 1e-14;
    });
    add("intercept-only mean and variance", [] {
        const RegressionFit f = fit_ols(DesignMatrix(Matrix::Ones(3, 1)), Vector::LinSpaced(3, 1.0, 3.0));
        return std::abs(f.beta_hat(0) - 2.0) < 1e-15 && std::abs(f.sigma2_hat - 1.0) < 1e-15;
    });
    add("equal variances reduce WLS to OLS", [] {
        oracle::Lcg rng(1);
        const auto in = support::random_instance(rng, 10, 3);
        const DesignMatrix X(support::to_matrix(in.x));
        const Vector y = support::to_vector(in.y);
        return (fit_wls(X, y, Vector::Constant(10, 2.5)).beta_hat - fit_ols(X, y).beta_hat).cwiseAbs().maxCoeff() <
               1e-10;
    });
    add("zero residuals give a zero sandwich", [] {
        Matrix x(4, 2);
        x << 1, 0, 1, 1, 1, 2, 1, 5;
        const DesignMatrix X(x);
        const RegressionFit f = fit_ols(X, 1.0 + 2.0 * x.col(1).array());
        return hc_covariance(f, X, HcFlavor::HC1).matrix.cwiseAbs().maxCoeff() == 0.0;
    });
    add("HC1 is HC0 times N/(N-p)", [] {
        oracle::Lcg rng(2);
        const auto in = support::random_instance(rng, 9, 3);
        const DesignMatrix X(support::to_matrix(in.x));
        const RegressionFit f = fit_wls(X, support::to_vector(in.y), support::to_vector(in.variances));
        return hc_covariance(f, X, HcFlavor::HC1).matrix == hc_covariance(f, X, HcFlavor::HC0).matrix * (9.0 / 6.0);
    });
    add("constant residuals give a flat skedastic fit", [] {
        const SkedasticFit f = fit_skedastic(Vector::LinSpaced(7, -1, 1.5), Vector::Constant(7, -0.8));
        return std::abs(f.gamma1) < 1e-12 && std::abs(f.gamma0 - std::log(0.64)) < 1e-12 && f.r_squared == 0.0;
    });
    add("exact log-linear squared residuals are recovered", [] {
        const Vector ls = Vector::LinSpaced(9, -1, 1.5);
        const SkedasticFit f = fit_skedastic(ls, (0.5 * (-0.3 + 1.7 * ls.array())).exp().matrix());
        return std::abs(f.gamma0 + 0.3) < 1e-10 && std::abs(f.gamma1 - 1.7) < 1e-10 &&
               std::abs(f.r_squared - 1.0) < 1e-10;
    });
    add("two iterations equal the manual composition", [] {
        const TrialData d = support::planted_trial(60, 77);
        const DesignMatrix V = treatment_design(d, true);
        const Vector ls = d.log_twin_variance();
        const auto [sk, fit] = iterate_weights(V, d.outcome, ls, 2);
        const SkedasticFit s1 = fit_skedastic(ls, fit_ols(V, d.outcome).residuals);
        const SkedasticFit s2 = fit_skedastic(ls, fit_wls(V, d.outcome, s1.sigma2_hat_i).residuals);
        return sk.gamma1 == s2.gamma1 && fit.beta_hat == fit_wls(V, d.outcome, s2.sigma2_hat_i).beta_hat;
    });
    add("negative slope flag", [] {
        const Vector ls = Vector::LinSpaced(10, -1, 1.5);
        return diagnostics(skedastic_from_coefficients(0.0, -0.5, ls), Vector::LinSpaced(10, -1, 1), ls)
            .negative_gamma1;
    });
    add("constant twin variance is rejected", [] {
        return raises(ErrorKind::DegenerateTwinVariance,
                      [] { fit_skedastic(Vector::Constant(8, 0.3), Vector::LinSpaced(8, -1, 1)); });
    });
    add("difference of arm means", [] {
        return std::abs(analyze_unadjusted(tiny_trial({1, 1, 0, 0}, {4, 6, 2, 4})).effect_estimate - 2.0) < 1e-15;
    });
    add("constant outcome has zero variance and a degenerate interval", [] {
        const AnalysisResult r = analyze_unadjusted(tiny_trial({1, 0, 1, 0, 1, 0}, {2, 2, 2, 2, 2, 2}));
        return r.hc1_variance == 0.0 && r.ci_low == r.effect_estimate && r.ci_high == r.effect_estimate;
    });
    add("all-zero score reproduces the unadjusted estimate", [] {
        TrialData d = support::planted_trial(30, 9);
        d.prognostic_score.setZero();
        return std::abs(analyze_procova(d).effect_estimate - analyze_unadjusted(d).effect_estimate) < 1e-12;
    });
    add("exact linear data", [] {
        TrialData d = support::planted_trial(20, 4);
        for (Eigen::Index i = 0; i < 20; ++i)
            d.outcome(i) = 2.0 + 0.4 * d.treatment[static_cast<std::size_t>(i)] + 0.5 * d.prognostic_score(i);
        const DesignMatrix V = treatment_design(d, true);
        return std::abs(analyze_procova(d).effect_estimate - 0.4) < 1e-12 &&
               fit_ols(V, d.outcome).residuals.cwiseAbs().maxCoeff() == 0.0;
    });
    add("equal twin variances collapse to PROCOVA", [] {
        TrialData d = support::planted_trial(50, 3);
        d.twin_variance.setConstant(1.3);
        const AnalysisResult r = analyze_weighted_procova_or_fallback(d);
        return r.fallback && std::abs(r.effect_estimate - analyze_procova(d).effect_estimate) < 1e-10;
    });
    add("self comparison is a zero reduction", [] { return pct_variance_reduction(0.7, 0.7) == 0.0; });
    add("equal variances give equal power", [] {
        return prospective_power(1.3, 1.3, 0.5, 0.05, 0.8).candidate_power == 0.8;
    });
    add("null effect gives alpha", [] {
        const PowerPair p = prospective_power(1.0, 0.5, 0.0, 0.05, 0.8);
        return p.baseline_power == 0.05 && p.candidate_power == 0.05;
    });
    add("homoskedastic residual variance", [] {
        const th::DesignDraw d = th::gaussian_design_generator({})(12, 5);
        const Matrix H = hat_matrix(d.V);
        const Vector v = th::residual_variances(d.V, Vector::Constant(12, 2.5));
        return (v - 2.5 * (Vector::Ones(12) - H.diagonal())).cwiseAbs().maxCoeff() < 1e-12;
    });
    add("homoskedastic hat identity", [] {
        const th::DesignDraw d = th::gaussian_design_generator({})(15, 6);
        const Matrix H = hat_matrix(d.V);
        for (Eigen::Index i = 0; i < 15; ++i) {
            const double h = H(i, i);
            if (std::abs((1 - h) * (1 - h) + H.row(i).squaredNorm() - h * h - (1 - h)) > 1e-10) return false;
        }
        return true;
    });
    add("log chi-square mean shift", [] {
        return std::abs(stats::kLogChiSqMeanShift - 1.27036) < 5e-6 && std::abs(stats::kEulerGamma - 0.5772) < 1e-4;
    });
    add("independent log chi-squares add their variances", [] {
        const double c[5] = {0.3, -1.2, 0.8, 0.1, 2.0};
        double sum_c2 = 0.0;
        for (double v : c) sum_c2 += v * v;
        CounterRng rng(9, 0, 0);
        std::vector<double> x(1'000'000);
        for (double& v : x) {
            v = 0.0;
            for (double ci : c) {
                const double z = rng.normal();
                v += ci * std::log(z * z);
            }
        }
        return std::abs(stats::sample_variance(x) / (stats::kLogChiSqVariance * sum_c2) - 1.0) < 0.02;
    });
    add("unit skedastic limit reproduces PROCOVA", [] {
        const th::JointSample s = th::independence_sample({}, 200000, 7);
        const th::AsymptoticSandwich sw = th::asymptotic_sandwich(s, [](double) { return 1.0; });
        return (sw.wprocova_cov - sw.procova_cov).cwiseAbs().maxCoeff() <=
               1e-12 * sw.procova_cov.cwiseAbs().maxCoeff();
    });
    add("constant variance gives a unit ratio", [] {
        const th::JointSample s = th::independence_sample({0.0, 0.0, 0.5, 0.0}, 1'000'000, 8);
        return std::abs(th::asymptotic_sandwich(s, [](double) { return 1.0; }).treatment_variance_ratio() - 1.0) <
               0.01;
    });
    add("constant limit gives no reduction", [] {
        const th::JointSample s = th::independence_sample({}, 200000, 10);
        return std::abs(th::variance_reduction_eta(s, [](double) { return 2.0; })) < 1e-12;
    });
    add("variance independent of twin variance gives no reduction", [] {
        // The limit of the fitted skedastic function has slope Cov(log s^2, log sigma^2) / Var(log s^2).
        const th::JointSample s = th::independence_sample({0.0, 0.0, 0.5, 1.0}, 1'000'000, 11);
        std::vector<double> ls(s.size()), lv(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) {
            ls[i] = std::log(s.s2(static_cast<Eigen::Index>(i)));
            lv[i] = std::log(s.sigma2(static_cast<Eigen::Index>(i)));
        }
        const oracle::Line lim = oracle::simple_regression(ls, lv);
        const double eta =
            th::variance_reduction_eta(s, [&](double s2) { return std::exp(lim.intercept + lim.slope * std::log(s2)); });
        return std::abs(eta) < 0.005;
    });
    add("uncorrelated construction has a zero limit slope", [] {
        const th::LimitTable t =
            th::limit_check(th::gaussian_design_generator({0.0, 0.0, 0.5, 1.0}), {100}, 10, 2000, 32);
        return std::abs(t.limit.gamma1) <= 3.0 * std::sqrt(1.0 / (0.5 * 20000.0));
    });
    add("homoskedastic degeneration of the generator", [] {
        sim::SimulationConfig c = sim::setting(2);
        c.gamma1 = 0.0;
        c.n = 10000;
        c.beta2 = 0.0;
        const auto g = sim::generate_trial(c, 3, 0);
        const double want = std::exp(c.gamma0);
        if ((g.sigma2.array() != want).any()) return false;
        const RegressionFit f = fit_ols(treatment_design(g.data, true), g.data.outcome);
        return std::abs(f.sigma2_hat / want - 1.0) < 0.02;
    });
    add("pure shift centres the arm difference", [] {
        sim::SimulationConfig c = sim::setting(3);
        c.beta1 = 0.4;
        c.beta2 = 0.0;
        c.tau1_sq = 1e-12;
        c.n = 100;
        std::vector<double> diffs;
        for (std::uint64_t r = 0; r < 2000; ++r) diffs.push_back(analyze_unadjusted(sim::generate_trial(c, 5, r).data).effect_estimate);
        return std::abs(stats::mean(diffs) - 0.4) < 3.0 * std::sqrt(stats::sample_variance(diffs) / 2000.0);
    });
    add("generated data depend only on (seed, index)", [] {
        sim::SimulationConfig c;
        c.n = 50;
        c.replications = 200;
        const auto a = sim::generate_trial(c, sim::cell_key(c.seed, 1), 7);
        const auto b = sim::generate_trial(c, sim::cell_key(c.seed, 1), 7);
        return a.data.outcome == b.data.outcome &&
               sim::run_cell(c, 1, 1).pct_var_reduction == sim::run_cell(c, 3, 1).pct_var_reduction;
    });
    add("gamma1 = 0 cell has no mean variance reduction", [] {
        return g_setting1_flat &&
               std::abs(g_setting1_flat->mean_pct_var_reduction) <= 3.0 * g_setting1_flat->pct_var_reduction_se;
    });
    add("singleton grid equals run_cell", [] {
        sim::SimulationConfig c;
        c.n = 40;
        c.replications = 150;
        return sim::run_grid({c})[0].metrics.pct_var_reduction == sim::run_cell(c).pct_var_reduction;
    });
    add("grid tables do not depend on parallelism", [] {
        sim::SimulationConfig a, b;
        a.n = b.n = 40;
        a.replications = b.replications = 150;
        b.gamma1 = 0.4;
        const auto x = sim::run_grid({a, b}, 1);
        const auto y = sim::run_grid({a, b}, 4);
        return x[0].metrics.pct_var_reduction == y[0].metrics.pct_var_reduction &&
               x[1].metrics.pct_var_reduction == y[1].metrics.pct_var_reduction;
    });
    add("saturated power returns the lower bracket", [] {
        sim::SimulationConfig c = sim::setting(1);
        c.beta1 = 2.0;
        return sim::find_n_for_power(c, 0.051, 500) == sim::kMinSearchN;
    });
    add("flat metric has zero slope", [] {
        const sim::MainEffect m = sim::simple_main_effect({1, 2, 3, 4}, {0.5, 0.5, 0.5, 0.5});
        return m.slope == 0.0 && m.p_value == 1.0;
    });
    add("empty outcomes are dropped", [] {
        std::string text = "participant_id,treatment,outcome,prognostic_score,twin_variance\n";
        for (int i = 1; i <= 10; ++i)
            text += "p," + std::to_string(i % 2) + "," + ((i == 3 || i == 8) ? "" : "1.5") + ",0.1,1\n";
        std::istringstream in(text);
        const csv::TrialCsv t = csv::ingest_csv(in);
        return t.data.size() == 8 && t.dropped_count == 2;
    });
    add("zero twin variance names its row", [] {
        std::string text = "participant_id,treatment,outcome,prognostic_score,twin_variance\n";
        for (int i = 1; i <= 6; ++i) text += "p,1,1,0," + std::string(i == 5 ? "0" : "1") + "\n";
        std::istringstream in(text);
        return raises(ErrorKind::NonPositiveTwinVariance, [&] { csv::ingest_csv(in); }, "row 5");
    });
    add("analyze flags the constant twin variance fallback", [] {
        TrialData d = support::planted_trial(80, 9);
        d.twin_variance.setConstant(0.7);
        const fs::path p = scratch("flat.csv");
        csv::write_trial_csv(p.string(), d);
        cli::AnalyzeOptions o;
        o.csv_path = p.string();
        const cli::Json j = cli::cmd_analyze(o);
        const cli::Json& w = j["results"][2];
        return w["fallback"] == true && w["warnings"][0]["kind"] == "DegenerateTwinVariance" &&
               std::abs(w["effect_estimate"].get<double>() - j["results"][1]["effect_estimate"].get<double>()) < 1e-10;
    });
    add("analyze is deterministic apart from the timestamp", [] {
        const fs::path p = scratch("planted.csv");
        csv::write_trial_csv(p.string(), support::planted_trial(300, 2));
        cli::AnalyzeOptions o;
        o.csv_path = p.string();
        cli::Json a = cli::cmd_analyze(o), b = cli::cmd_analyze(o);
        a["metadata"].erase("timestamp");
        b["metadata"].erase("timestamp");
        return cli::dump(a) == cli::dump(b);
    });
    add("one-cell simulate writes one row and one plot row per replication", [] {
        const fs::path cfg = scratch("one.json");
        std::ofstream(cfg) << R"({"n": 60, "replications": 100})";
        cli::SimulateOptions o;
        o.config_path = cfg.string();
        o.out_dir = scratch("one_a").string();
        cli::cmd_simulate(o);
        const std::string m = slurp(fs::path(o.out_dir) / "metrics.csv");
        const std::string p = slurp(fs::path(o.out_dir) / "plot_data.csv");
        return std::count(m.begin(), m.end(), '\n') == 2 && std::count(p.begin(), p.end(), '\n') == 101;
    });
    add("simulate reruns reproduce their files", [] {
        const fs::path cfg = scratch("one.json");
        cli::SimulateOptions o;
        o.config_path = cfg.string();
        o.out_dir = scratch("one_b").string();
        cli::cmd_simulate(o);
        const fs::path a = scratch("one_a"), b = scratch("one_b");
        return slurp(a / "metrics.csv") == slurp(b / "metrics.csv") &&
               slurp(a / "plot_data.csv") == slurp(b / "plot_data.csv");
    });
    add("variance-reduction with a constant limit reports zero", [] {
        cli::VarianceReductionOptions o;
        o.constant_limit = true;
        o.draws = 100000;
        return std::abs(cli::cmd_variance_reduction(o)["eta"].get<double>()) < 1e-12;
    });
    add("residual-moments passes library values through", [] {
        const fs::path p = scratch("design8.csv");
        cli::cmd_make_design(8, {}, 3, p.string());
        const cli::DesignFile d = cli::read_design_csv(p.string());
        const th::ResidualMoments lib = th::residual_moments(d.V, d.sigma2);
        const cli::Json j = cli::cmd_residual_moments(p.string());
        for (Eigen::Index i = 0; i < 8; ++i)
            for (Eigen::Index k = 0; k < 8; ++k)
                if (j["covariances"][static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>() !=
                    lib.covariances(i, k))
                    return false;
        return true;
    });
    add("power command with equal variances", [] {
        cli::PowerOptions o;
        o.baseline_var = o.candidate_var = 0.4;
        const cli::Json j = cli::cmd_power(o);
        return j["baseline_power"] == j["candidate_power"];
    });
    return out;
}

Outcome oracle_equivalence() {
    oracle::Lcg rng(1010);
    int bad_instances = 0;
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t n = 5 + static_cast<std::size_t>(t % 8);  // 5..12
        const std::size_t p = 2 + static_cast<std::size_t>(t % 2);
        const auto in = support::random_instance(rng, n, p);
        const DesignMatrix X(support::to_matrix(in.x));
        const Vector y = support::to_vector(in.y);
        const auto o_ols = oracle::ols(in.x, in.y);
        const auto o_wls = oracle::wls(in.x, in.y, in.variances);
        const RegressionFit ols = fit_ols(X, y);
        const RegressionFit wls = fit_wls(X, y, support::to_vector(in.variances));
        const auto o_sk = oracle::skedastic(in.log_s2, o_ols.residuals, kSquaredResidualFloor);
        const SkedasticFit sk = fit_skedastic(support::to_vector(in.log_s2), ols.residuals);
        const double gap = std::max({support::rel_gap(support::from_vector(ols.beta_hat), o_ols.beta),
                                     support::rel_gap(support::from_vector(wls.beta_hat), o_wls.beta),
                                     support::rel_gap(hc_covariance(ols, X, HcFlavor::HC1).matrix, o_ols.hc1),
                                     support::rel_gap(hc_covariance(wls, X, HcFlavor::HC1).matrix, o_wls.hc1),
                                     support::rel_gap({sk.gamma0, sk.gamma1}, {o_sk.intercept, o_sk.slope})});
        worst = std::max(worst, gap);
        bad_instances += gap > 1e-10;
    }
    std::string failed;
    int held = 0;
    const auto ids = identities();
    for (const Identity& id : ids) {
        bool ok = false;
        try {
            ok = id.check();
        } catch (const std::exception& e) {
            failed += "; " + id.name + " threw: " + e.what();
            continue;
        }
        if (ok) {
            ++held;
        } else {
            failed += "; " + id.name;
        }
    }
    return {bad_instances == 0 && held == static_cast<int>(ids.size()),
            "100 random instances (N 5..12) max relative gap " + fmt("%.2e", worst) + " (" +
                std::to_string(bad_instances) + " over 1e-10); " + std::to_string(held) + "/" +
                std::to_string(ids.size()) + " identities hold" + (failed.empty() ? "" : " [failed" + failed + "]")};
}

}  // namespace

int main() {
    struct Criterion {
        int id;
        const char* title;
        Outcome (*run)();
    };
    // Criterion 6 reads the cells simulated by 1, 2, 3 and 7, so it runs after them.
    const Criterion criteria[] = {
        {1, "null operating characteristics", null_operating_characteristics},
        {2, "power reproduction", power_reproduction},
        {3, "variance-reduction monotonicity", variance_reduction_monotonicity},
        {4, "residual-moment oracle", residual_moment_oracle},
        {5, "expected skedastic coefficients", expected_gamma_oracle},
        {7, "closed-form and sandwich variance reduction", variance_reduction_equivalence},
        {6, "weighted estimator unbiasedness", weighted_unbiasedness},
        {8, "sample-size search", sample_size_search},
        {9, "case-study arithmetic", case_study_arithmetic},
        {10, "oracle equivalence and identities", oracle_equivalence},
    };
    int failures = 0;
    for (const Criterion& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("error: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        failures += !o.pass;
        std::printf("%s [%d] %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", c.id, c.title, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria failed\n", failures, std::size(criteria));
    return failures == 0 ? 0 : 1;
}
