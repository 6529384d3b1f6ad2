// SPDX-License-Identifier: Apache-2.0
#include "wprocova/commands.hpp"

#include "wprocova/skedastic.hpp"
#include "wprocova/trial_csv.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

namespace wprocova::cli {

namespace {

Json vec_json(const Vector& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
    return a;
}

Json mat_json(const Matrix& m) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_json(m.row(i).transpose()));
    return rows;
}

/// JSON has no infinities; they are written as null.
Json num(double v) {
    return std::isfinite(v) ? Json(v) : Json(nullptr);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Json warning(std::string_view kind, const std::string& message) {
    return {{"kind", kind}, {"message", message}};
}

Json result_json(const AnalysisResult& r) {
    Json j = {
        {"method", to_string(r.method)},
        {"effect_estimate", r.effect_estimate},
        {"hc1_variance", r.hc1_variance},
        {"hc1_se", std::sqrt(r.hc1_variance)},
        {"test_statistic", num(r.test_statistic)},
        {"p_value", r.p_value},
        {"ci_low", r.ci_low},
        {"ci_high", r.ci_high},
        {"n_used", r.n_used},
        {"fallback", r.fallback},
    };
    if (r.skedastic) {
        j["skedastic"] = {
            {"gamma0", r.skedastic->gamma0},
            {"gamma1", r.skedastic->gamma1},
            {"r_squared", r.skedastic->r_squared},
            {"clamped_count", r.skedastic->clamped_count},
        };
    }
    return j;
}

std::string pointer_escape(const std::string& key) {
    std::string out;
    for (char c : key) {
        if (c == '~') {
            out += "~0";
        } else if (c == '/') {
            out += "~1";
        } else {
            out += c;
        }
    }
    return out;
}

[[noreturn]] void config_error(const std::string& pointer, const std::string& message) {
    throw Error(ErrorKind::InvalidConfig, (pointer.empty() ? std::string("/") : pointer) + ": " + message);
}

std::vector<double> number_axis(const Json& cfg, const std::string& key, double fallback) {
    const std::string ptr = "/" + pointer_escape(key);
    if (!cfg.contains(key)) return {fallback};
    const Json& v = cfg.at(key);
    if (v.is_number()) return {v.get<double>()};
    if (!v.is_array()) config_error(ptr, "expected a number or an array of numbers");
    if (v.empty()) config_error(ptr, "axis must not be empty");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].is_number()) config_error(ptr + "/" + std::to_string(i), "expected a number");
        out.push_back(v[i].get<double>());
    }
    return out;
}

std::size_t count_value(const Json& v, const std::string& ptr, std::size_t minimum) {
    if (!v.is_number_integer() && !(v.is_number_float() && std::floor(v.get<double>()) == v.get<double>())) {
        config_error(ptr, "expected an integer");
    }
    const double d = v.get<double>();
    if (d < static_cast<double>(minimum)) config_error(ptr, "must be at least " + std::to_string(minimum));
    return static_cast<std::size_t>(d);
}

std::vector<std::size_t> count_axis(const Json& cfg, const std::string& key, std::size_t fallback,
                                    std::size_t minimum) {
    const std::string ptr = "/" + key;
    if (!cfg.contains(key)) return {fallback};
    const Json& v = cfg.at(key);
    if (!v.is_array()) return {count_value(v, ptr, minimum)};
    if (v.empty()) config_error(ptr, "axis must not be empty");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(count_value(v[i], ptr + "/" + std::to_string(i), minimum));
    return out;
}

sim::Scenario scenario_value(const Json& v, const std::string& ptr) {
    try {
        if (v.is_string()) return sim::scenario_from_string(v.get<std::string>());
        if (v.is_number_integer()) return sim::scenario_from_string(std::to_string(v.get<long long>()));
    } catch (const Error&) {
    }
    config_error(ptr, "expected one of \"fixed_total\", \"deterministic\", \"fixed_noise\" (or 1, 2, 3)");
}

std::string metrics_csv(const std::vector<sim::GridRow>& rows) {
    std::ostringstream out;
    static const char* const kMethodPrefix[] = {"unadjusted", "procova", "wprocova"};
    out << "cell,scenario,n,beta0,beta1,beta2,gamma0,gamma1,gamma2,tau1_sq,tau2_sq,tau3_sq,psi_sq,replications,"
           "failed_replications,status";
    for (const char* p : kMethodPrefix) {
        out << ',' << p << "_bias," << p << "_estimate_sd," << p << "_rejection_rate," << p << "_coverage," << p
            << "_mean_hc1_variance";
    }
    out << ",mean_pct_var_reduction,median_pct_var_reduction,pct_var_reduction_se,var_inflation_prob,"
           "mean_skedastic_r_squared,mean_gamma1_hat\n";
    const auto f = csv::format_double;
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const auto& c = rows[k].config;
        const auto& m = rows[k].metrics;
        double psi = std::nan("");
        try {
            psi = c.psi_sq();
        } catch (const Error&) {
        }
        const std::string status = rows[k].error ? "error" : (m.failed ? "failed" : "ok");
        out << k << ',' << to_string(c.scenario) << ',' << c.n << ',' << f(c.beta0) << ',' << f(c.beta1) << ','
            << f(c.beta2) << ',' << f(c.gamma0) << ',' << f(c.gamma1) << ',' << f(c.gamma2) << ',' << f(c.tau1_sq)
            << ',' << f(c.tau2_sq) << ',' << f(c.tau3_sq) << ',' << (std::isnan(psi) ? "" : f(psi)) << ','
            << m.replications << ',' << m.failed_replications << ',' << status;
        for (const auto& s : m.methods) {
            out << ',' << f(s.bias) << ',' << f(s.estimate_sd) << ',' << f(s.rejection_rate) << ',' << f(s.coverage)
                << ',' << f(s.mean_hc1_variance);
        }
        out << ',' << f(m.mean_pct_var_reduction) << ',' << f(m.median_pct_var_reduction) << ','
            << f(m.pct_var_reduction_se) << ',' << f(m.var_inflation_prob) << ',' << f(m.mean_skedastic_r_squared)
            << ',' << f(m.mean_gamma1_hat) << '\n';
    }
    return out.str();
}

Json cell_json(std::size_t index, const sim::GridRow& row) {
    const auto& c = row.config;
    const auto& m = row.metrics;
    Json j = {
        {"cell", index},
        {"scenario", to_string(c.scenario)},
        {"n", c.n},
        {"beta0", c.beta0},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"gamma0", c.gamma0},
        {"gamma1", c.gamma1},
        {"gamma2", c.gamma2},
        {"tau1_sq", c.tau1_sq},
        {"tau2_sq", c.tau2_sq},
        {"tau3_sq", c.tau3_sq},
        {"replications", m.replications},
        {"failed_replications", m.failed_replications},
        {"status", row.error ? "error" : (m.failed ? "failed" : "ok")},
    };
    try {
        j["psi_sq"] = c.psi_sq();
    } catch (const Error&) {
        j["psi_sq"] = nullptr;
    }
    if (row.error) {
        j["error"] = *row.error;
        return j;
    }
    if (!m.failure.empty()) j["first_replication_error"] = m.failure;
    Json methods = Json::object();
    for (const auto& s : m.methods) {
        methods[std::string(to_string(s.method))] = {
            {"bias", s.bias},
            {"estimate_sd", s.estimate_sd},
            {"rejection_rate", s.rejection_rate},
            {"coverage", s.coverage},
            {"mean_hc1_variance", s.mean_hc1_variance},
        };
    }
    j["methods"] = std::move(methods);
    j["weighted_vs_procova"] = {
        {"mean_pct_var_reduction", m.mean_pct_var_reduction},
        {"median_pct_var_reduction", m.median_pct_var_reduction},
        {"pct_var_reduction_se", m.pct_var_reduction_se},
        {"var_inflation_prob", m.var_inflation_prob},
        {"mean_skedastic_r_squared", m.mean_skedastic_r_squared},
        {"mean_gamma1_hat", m.mean_gamma1_hat},
    };
    return j;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

Json canonicalize(const Json& j) {
    if (j.is_object()) {
        Json out = Json::object();
        for (const auto& [k, v] : j.items()) out[k] = canonicalize(v);
        return out;
    }
    if (j.is_array()) {
        Json out = Json::array();
        for (const auto& v : j) out.push_back(canonicalize(v));
        return out;
    }
    if (j.is_number_float()) {
        const double d = j.get<double>();
        if (std::isfinite(d) && std::floor(d) == d && std::abs(d) < 9007199254740992.0) {
            return Json(static_cast<std::int64_t>(d));
        }
    }
    if (j.is_number_unsigned() && j.get<std::uint64_t>() <= static_cast<std::uint64_t>(INT64_MAX)) {
        return Json(static_cast<std::int64_t>(j.get<std::uint64_t>()));
    }
    return j;
}

std::string config_digest(const Json& config) {
    return hex64(fnv1a64(canonicalize(config).dump()));
}

Json make_metadata(const Json& config, std::optional<std::uint64_t> seed) {
    return {
        {"version", kVersion},
        {"seed", seed ? Json(*seed) : Json(nullptr)},
        {"timestamp", utc_timestamp()},
        {"config_digest", config_digest(config)},
    };
}

Json error_object(ErrorKind kind, const std::string& message) {
    return {{"error", {{"kind", to_string(kind)}, {"message", message}}}};
}

std::string dump(const Json& j) {
    return j.dump(2) + "\n";
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Io, "cannot write '" + path + "'");
    out << content;
    if (!out) throw Error(ErrorKind::Io, "failed writing '" + path + "'");
}

Json cmd_analyze(const AnalyzeOptions& o) {
    if (o.methods.empty()) throw Error(ErrorKind::InvalidArgument, "no methods selected");
    const std::string bytes = read_file(o.csv_path);
    std::istringstream in(bytes);
    const csv::TrialCsv t = csv::ingest_csv(in);
    const InferenceOptions io{o.alpha, o.reference};

    Json warnings = Json::array();
    if (t.dropped_count > 0) {
        warnings.push_back(warning("DroppedRows", std::to_string(t.dropped_count) +
                                                      " rows with a missing outcome were removed before analysis"));
    }

    const AnalysisResult base = analyze_unadjusted(t.data, io);
    Json results = Json::array();
    Json diag = nullptr;
    for (Method method : o.methods) {
        AnalysisResult r;
        switch (method) {
            case Method::Unadjusted: r = base; break;
            case Method::Procova: r = analyze_procova(t.data, io); break;
            case Method::WeightedProcova:
                r = analyze_weighted_procova_or_fallback(t.data, io, o.iterations);
                break;
        }
        Json j = result_json(r);
        if (base.hc1_variance > 0.0) {
            j["pct_var_reduction_vs_unadjusted"] = pct_variance_reduction(base.hc1_variance, r.hc1_variance);
            if (r.hc1_variance > 0.0) {
                const PowerPair pp =
                    prospective_power(base.hc1_variance, r.hc1_variance, 1.0, o.alpha, o.baseline_power);
                j["prospective_power"] = {
                    {"baseline_power", pp.baseline_power},
                    {"power", pp.candidate_power},
                    {"boost_pct_points", 100.0 * pp.boost()},
                };
            }
        } else {
            warnings.push_back(warning("ZeroBaselineVariance",
                                       "unadjusted HC1 variance is zero; reductions and power boosts are undefined"));
        }

        if (method == Method::WeightedProcova) {
            if (r.fallback) {
                const Json w = warning(
                    "DegenerateTwinVariance",
                    "twin variances are constant; Weighted PROCOVA fell back to unit weights (PROCOVA result)");
                j["warnings"] = Json::array({w});
                warnings.push_back(w);
            } else {
                const SkedasticFit& sk = *r.skedastic;
                if (sk.clamped_count > 0) {
                    warnings.push_back(warning("ClampedResiduals", std::to_string(sk.clamped_count) +
                                                                       " squared residuals were floored at 1e-150"));
                }
                if (sk.gamma1 < 0.0) {
                    warnings.push_back(warning("NegativeGamma1",
                                               "fitted skedastic slope is negative; larger twin variances get more "
                                               "weight"));
                }
                const DesignMatrix V = treatment_design(t.data, true);
                const RegressionFit ols = fit_ols(V, t.data.outcome);
                const DiagnosticsReport d = diagnostics(sk, ols.residuals, t.data.log_twin_variance());
                diag = {
                    {"heteroskedasticity_pvalue", d.heteroskedasticity_pvalue},
                    {"twin_variance_dispersion", d.twin_variance_dispersion},
                    {"weight_residual_association", d.weight_residual_association},
                    {"negative_gamma1", d.negative_gamma1},
                };
            }
        }
        results.push_back(std::move(j));
    }

    Json methods = Json::array();
    for (Method m : o.methods) methods.push_back(to_string(m));
    const Json config = {
        {"command", "analyze"},
        {"alpha", o.alpha},
        {"iterations", o.iterations},
        {"methods", methods},
        {"reference", o.reference == Reference::Normal ? "normal" : "student_t"},
        {"baseline_power", o.baseline_power},
        {"csv_fnv1a64", hex64(fnv1a64(bytes))},
    };
    return {
        {"metadata", make_metadata(config, std::nullopt)},
        {"config", config},
        {"input",
         {{"rows_read", t.rows_read},
          {"n_used", t.data.size()},
          {"dropped_rows", t.dropped_count},
          {"twin_variance_column", t.log_twin_variance_column ? "log_twin_variance" : "twin_variance"}}},
        {"results", results},
        {"diagnostics", diag},
        {"warnings", warnings},
    };
}

std::string render_analyze_table(const Json& report) {
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-18s %12s %12s %25s %10s %9s %9s\n", "method", "estimate", "hc1_var",
                  "confidence interval", "p_value", "var_red%", "boost_pp");
    out << line;
    for (const Json& r : report.at("results")) {
        const double vr = r.contains("pct_var_reduction_vs_unadjusted")
                              ? r.at("pct_var_reduction_vs_unadjusted").get<double>()
                              : std::nan("");
        const double boost = r.contains("prospective_power")
                                 ? r.at("prospective_power").at("boost_pct_points").get<double>()
                                 : std::nan("");
        std::snprintf(line, sizeof line, "%-18s %12.6g %12.6g  [%10.5g, %10.5g] %10.4g %9.3f %9.3f%s\n",
                      r.at("method").get<std::string>().c_str(), r.at("effect_estimate").get<double>(),
                      r.at("hc1_variance").get<double>(), r.at("ci_low").get<double>(),
                      r.at("ci_high").get<double>(), r.at("p_value").get<double>(), vr, boost,
                      r.at("fallback").get<bool>() ? "  (fallback)" : "");
        out << line;
    }
    for (const Json& w : report.at("warnings")) {
        out << "warning [" << w.at("kind").get<std::string>() << "]: " << w.at("message").get<std::string>() << '\n';
    }
    return out.str();
}

std::uint64_t parse_seed(const std::string& text, const std::string& where) {
    if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
        throw Error(ErrorKind::InvalidArgument, where + ": seed must be a non-negative integer, got '" + text + "'");
    }
    try {
        return std::stoull(text);
    } catch (const std::exception&) {
        throw Error(ErrorKind::InvalidArgument, where + ": seed does not fit in 64 bits");
    }
}

SeedChoice resolve_seed(std::optional<std::uint64_t> flag, const char* env, std::optional<std::uint64_t> config) {
    if (flag) return {*flag, "flag"};
    if (env != nullptr && *env != '\0') return {parse_seed(env, "WPROCOVA_SEED"), "environment"};
    if (config) return {*config, "config"};
    return {};
}

GridSpec parse_grid_config(const Json& cfg) {
    if (!cfg.is_object()) config_error("", "config must be a JSON object");
    static const std::set<std::string> known = {
        "description", "seed",   "replications", "alpha",   "iterations", "setting",  "scenario", "n",
        "beta0",       "beta1",  "beta2",        "gamma0",  "gamma1",     "gamma2",   "tau1_sq",  "tau2_sq",
        "tau3_sq",     "calibrate_n",
    };
    for (const auto& [k, v] : cfg.items()) {
        if (!known.count(k)) config_error("/" + pointer_escape(k), "unknown key");
    }

    GridSpec spec;
    sim::SimulationConfig base;
    if (cfg.contains("setting")) {
        const std::size_t s = count_value(cfg.at("setting"), "/setting", 1);
        if (s > 3) config_error("/setting", "must be 1, 2 or 3");
        base = sim::setting(static_cast<int>(s));
    }
    if (cfg.contains("seed")) {
        const Json& v = cfg.at("seed");
        if (v.is_number_unsigned()) {
            spec.seed = v.get<std::uint64_t>();
        } else if (v.is_number_integer() && v.get<long long>() >= 0) {
            spec.seed = static_cast<std::uint64_t>(v.get<long long>());
        } else if (v.is_string()) {
            try {
                spec.seed = parse_seed(v.get<std::string>(), "/seed");
            } catch (const Error& e) {
                config_error("/seed", e.what());
            }
        } else {
            config_error("/seed", "expected a non-negative integer");
        }
    }
    if (cfg.contains("replications")) {
        base.replications = count_value(cfg.at("replications"), "/replications", sim::kMinReplications);
    }
    if (cfg.contains("alpha")) {
        const Json& v = cfg.at("alpha");
        if (!v.is_number() || !(v.get<double>() > 0.0 && v.get<double>() < 1.0)) {
            config_error("/alpha", "expected a number in (0, 1)");
        }
        base.alpha = v.get<double>();
    }
    if (cfg.contains("iterations")) {
        base.iterations = static_cast<int>(count_value(cfg.at("iterations"), "/iterations", 1));
    }
    if (cfg.contains("calibrate_n")) {
        const Json& v = cfg.at("calibrate_n");
        if (!v.is_object()) config_error("/calibrate_n", "expected an object");
        Calibration cal;
        for (const auto& [k, x] : v.items()) {
            if (k == "target_power") {
                if (!x.is_number()) config_error("/calibrate_n/target_power", "expected a number");
                cal.target_power = x.get<double>();
            } else if (k == "reps_per_probe") {
                cal.reps_per_probe = count_value(x, "/calibrate_n/reps_per_probe", sim::kMinReplications);
            } else {
                config_error("/calibrate_n/" + pointer_escape(k), "unknown key");
            }
        }
        spec.calibrate = cal;
    }

    std::vector<sim::Scenario> scenarios{base.scenario};
    if (cfg.contains("scenario")) {
        const Json& v = cfg.at("scenario");
        scenarios.clear();
        if (v.is_array()) {
            if (v.empty()) config_error("/scenario", "axis must not be empty");
            for (std::size_t i = 0; i < v.size(); ++i) {
                scenarios.push_back(scenario_value(v[i], "/scenario/" + std::to_string(i)));
            }
        } else {
            scenarios.push_back(scenario_value(v, "/scenario"));
        }
    }
    const auto ns = count_axis(cfg, "n", base.n, 8);
    const auto b0 = number_axis(cfg, "beta0", base.beta0);
    const auto b1 = number_axis(cfg, "beta1", base.beta1);
    const auto b2 = number_axis(cfg, "beta2", base.beta2);
    const auto g0 = number_axis(cfg, "gamma0", base.gamma0);
    const auto g1 = number_axis(cfg, "gamma1", base.gamma1);
    const auto g2 = number_axis(cfg, "gamma2", base.gamma2);
    const auto t1 = number_axis(cfg, "tau1_sq", base.tau1_sq);
    const auto t2 = number_axis(cfg, "tau2_sq", base.tau2_sq);
    const auto t3 = number_axis(cfg, "tau3_sq", base.tau3_sq);

    for (auto sc : scenarios)
        for (auto n : ns)
            for (double a : b0)
                for (double b : b1)
                    for (double c : b2)
                        for (double d : g0)
                            for (double e : g1)
                                for (double f : g2)
                                    for (double x : t1)
                                        for (double y : t2)
                                            for (double z : t3) {
                                                sim::SimulationConfig cell = base;
                                                cell.scenario = sc;
                                                cell.n = n;
                                                cell.beta0 = a;
                                                cell.beta1 = b;
                                                cell.beta2 = c;
                                                cell.gamma0 = d;
                                                cell.gamma1 = e;
                                                cell.gamma2 = f;
                                                cell.tau1_sq = x;
                                                cell.tau2_sq = y;
                                                cell.tau3_sq = z;
                                                spec.cells.push_back(cell);
                                            }
    return spec;
}

Json cmd_simulate(const SimulateOptions& o) {
    const std::string text = read_file(o.config_path);
    Json cfg;
    try {
        cfg = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw Error(ErrorKind::InvalidConfig, std::string("/: not valid JSON: ") + e.what());
    }
    GridSpec spec = parse_grid_config(cfg);
    const SeedChoice seed = resolve_seed(o.seed, o.env_seed, spec.seed);

    Json warnings = Json::array();
    std::vector<std::optional<std::size_t>> calibrated(spec.cells.size());
    for (std::size_t k = 0; k < spec.cells.size(); ++k) {
        auto& cell = spec.cells[k];
        cell.seed = seed.seed;
        if (spec.calibrate && cell.beta1 != 0.0) {
            try {
                cell.n = sim::find_n_for_power(cell, spec.calibrate->target_power, spec.calibrate->reps_per_probe,
                                               o.parallelism);
                calibrated[k] = cell.n;
            } catch (const Error& e) {
                warnings.push_back(warning(to_string(e.kind()), "cell " + std::to_string(k) + ": " + e.what()));
            }
        }
    }

    const std::vector<sim::GridRow> rows = sim::run_grid(spec.cells, o.parallelism);

    Json cells = Json::array();
    std::ostringstream plot;
    plot << "cell,replication,pct_var_reduction\n";
    for (std::size_t k = 0; k < rows.size(); ++k) {
        Json c = cell_json(k, rows[k]);
        if (calibrated[k]) c["calibrated_n"] = *calibrated[k];
        if (rows[k].error) {
            warnings.push_back(warning("CellError", "cell " + std::to_string(k) + ": " + *rows[k].error));
        } else if (rows[k].metrics.failed) {
            warnings.push_back(warning("CellFailed", "cell " + std::to_string(k) + ": more than 1% of replications "
                                                                                  "failed"));
        }
        cells.push_back(std::move(c));
        const auto& pct = rows[k].metrics.pct_var_reduction;
        for (std::size_t r = 0; r < pct.size(); ++r) plot << k << ',' << r << ',' << csv::format_double(pct[r]) << '\n';
    }

    Json config = cfg;
    config["seed"] = seed.seed;
    Json metadata = make_metadata(config, seed.seed);
    metadata["seed_source"] = seed.source;
    metadata["parallelism"] = o.parallelism;
    const Json report = {
        {"metadata", metadata},
        {"config", canonicalize(config)},
        {"cells", cells},
        {"warnings", warnings},
    };

    std::filesystem::create_directories(o.out_dir);
    const std::filesystem::path dir(o.out_dir);
    write_text((dir / "metrics.json").string(), dump(report));
    write_text((dir / "metrics.csv").string(), metrics_csv(rows));
    write_text((dir / "plot_data.csv").string(), plot.str());
    return report;
}

Json cmd_power(const PowerOptions& o) {
    const PowerPair pp = prospective_power(o.baseline_var, o.candidate_var, o.effect, o.alpha, o.baseline_power);
    const Json config = {
        {"command", "power"},
        {"baseline_var", o.baseline_var},
        {"candidate_var", o.candidate_var},
        {"effect", o.effect},
        {"alpha", o.alpha},
        {"baseline_power", o.baseline_power},
    };
    return {
        {"metadata", make_metadata(config, std::nullopt)},
        {"config", config},
        {"baseline_power", pp.baseline_power},
        {"candidate_power", pp.candidate_power},
        {"boost_pct_points", 100.0 * pp.boost()},
        {"pct_var_reduction", pct_variance_reduction(o.baseline_var, o.candidate_var)},
    };
}

DesignFile read_design_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Io, "cannot open '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorKind::MissingColumn, "design file has no header");
    const auto header = csv::split_record(line);
    std::optional<std::size_t> c_sigma, c_log;
    std::vector<std::size_t> design_cols;
    for (std::size_t k = 0; k < header.size(); ++k) {
        if (header[k] == "sigma2") {
            c_sigma = k;
        } else if (header[k] == "log_s2") {
            c_log = k;
        } else {
            design_cols.push_back(k);
        }
    }
    if (!c_sigma) throw Error(ErrorKind::MissingColumn, "design file needs a 'sigma2' column");
    if (design_cols.empty()) throw Error(ErrorKind::MissingColumn, "design file has no design columns");

    std::vector<std::vector<double>> rows;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++row;
        const auto f = csv::split_record(line);
        if (f.size() != header.size()) {
            throw Error(ErrorKind::MalformedNumber, "row " + std::to_string(row) + ": wrong number of fields");
        }
        std::vector<double> vals(f.size());
        for (std::size_t k = 0; k < f.size(); ++k) {
            if (!csv::parse_double(f[k], vals[k])) {
                throw Error(ErrorKind::MalformedNumber,
                            "row " + std::to_string(row) + ": column " + header[k] + " is not a number");
            }
        }
        rows.push_back(std::move(vals));
    }
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto p = static_cast<Eigen::Index>(design_cols.size());
    Matrix V(n, p);
    Vector sigma2(n), log_s2(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<std::size_t>(i)];
        for (Eigen::Index j = 0; j < p; ++j) V(i, j) = r[design_cols[static_cast<std::size_t>(j)]];
        sigma2(i) = r[*c_sigma];
        if (c_log) log_s2(i) = r[*c_log];
    }
    DesignFile out{DesignMatrix(std::move(V)), std::move(sigma2), std::nullopt};
    if (c_log) out.log_s2 = std::move(log_s2);
    return out;
}

void write_design_csv(const std::string& path, const theory::DesignDraw& draw) {
    std::ostringstream out;
    const Matrix& V = draw.V.values();
    for (Eigen::Index j = 0; j < V.cols(); ++j) out << "x" << j << ',';
    out << "log_s2,sigma2\n";
    for (Eigen::Index i = 0; i < V.rows(); ++i) {
        for (Eigen::Index j = 0; j < V.cols(); ++j) out << csv::format_double(V(i, j)) << ',';
        out << csv::format_double(draw.log_s2(i)) << ',' << csv::format_double(draw.sigma2(i)) << '\n';
    }
    write_text(path, out.str());
}

Json cmd_residual_moments(const std::string& design_path) {
    const DesignFile d = read_design_csv(design_path);
    const theory::ResidualMoments rm = theory::residual_moments(d.V, d.sigma2);
    const Json config = {{"command", "theory residual-moments"}, {"design_fnv1a64", hex64(fnv1a64(read_file(design_path)))}};
    return {
        {"metadata", make_metadata(config, std::nullopt)},
        {"n", d.V.rows()},
        {"variances", vec_json(rm.variances)},
        {"covariances", mat_json(rm.covariances)},
        {"squared_covariances", mat_json(rm.squared_covariances())},
        {"log_sq_means", vec_json(rm.log_sq_means)},
        {"log_sq_variance", rm.log_sq_variance},
    };
}

Json cmd_expected_gamma(const std::string& design_path, std::size_t mc_draws, std::uint64_t seed) {
    const DesignFile d = read_design_csv(design_path);
    if (!d.log_s2) throw Error(ErrorKind::MissingColumn, "expected-gamma needs a 'log_s2' column");
    const theory::GammaPair e = theory::expected_gamma(d.V, *d.log_s2, d.sigma2);
    Json config = {{"command", "theory expected-gamma"},
                   {"design_fnv1a64", hex64(fnv1a64(read_file(design_path)))},
                   {"draws", mc_draws}};
    Json out = {{"n", d.V.rows()}, {"expected_gamma0", e.gamma0}, {"expected_gamma1", e.gamma1}};
    std::optional<std::uint64_t> used_seed;
    if (mc_draws > 0) {
        const theory::GammaPair v = theory::gamma_variance_mc(d.V, *d.log_s2, d.sigma2, mc_draws, seed);
        out["variance_gamma0"] = v.gamma0;
        out["variance_gamma1"] = v.gamma1;
        out["draws"] = mc_draws;
        config["seed"] = seed;
        used_seed = seed;
    }
    out["metadata"] = make_metadata(config, used_seed);
    return out;
}

Json cmd_variance_reduction(const VarianceReductionOptions& o) {
    const theory::JointSample s = theory::independence_sample(o.params, o.draws, o.seed);
    const double g0 = o.limit_gamma0.value_or(o.params.gamma0);
    const double g1 = o.limit_gamma1.value_or(o.params.gamma1);
    theory::SkedasticLimit G;
    if (o.constant_limit) {
        G = [](double) { return 1.0; };
    } else {
        G = [g0, g1](double s2) { return std::exp(g0 + g1 * std::log(s2)); };
    }
    const double eta = theory::variance_reduction_eta(s, G);
    const theory::AsymptoticSandwich sw = theory::asymptotic_sandwich(s, G);
    const Json config = {
        {"command", "theory variance-reduction"},
        {"gamma0", o.params.gamma0},
        {"gamma1", o.params.gamma1},
        {"tau2_sq", o.params.tau2_sq},
        {"psi_sq", o.params.psi_sq},
        {"limit", o.constant_limit ? Json("constant") : Json({{"gamma0", g0}, {"gamma1", g1}})},
        {"draws", o.draws},
        {"seed", o.seed},
    };
    return {
        {"metadata", make_metadata(config, o.seed)},
        {"config", config},
        {"eta", eta},
        {"pct_eta", 100.0 * eta},
        {"sandwich_ratio", sw.treatment_variance_ratio()},
        {"pct_sandwich", 100.0 * (1.0 - sw.treatment_variance_ratio())},
        {"omega_bread", mat_json(sw.omega_bread)},
        {"omega_meat", mat_json(sw.omega_meat)},
        {"procova_cov", mat_json(sw.procova_cov)},
        {"wprocova_cov", mat_json(sw.wprocova_cov)},
    };
}

Json cmd_limit_check(const LimitCheckOptions& o) {
    const theory::LimitTable t = theory::limit_check(theory::gaussian_design_generator(o.params), o.n_grid,
                                                           o.designs_per_n, o.reference_n, o.seed);
    Json rows = Json::array();
    for (const auto& r : t.rows) {
        rows.push_back({{"n", r.n},
                        {"mean_expected_gamma0", r.mean_gamma0},
                        {"mean_expected_gamma1", r.mean_gamma1},
                        {"se_gamma1", r.se_gamma1},
                        {"gap_gamma1", r.gap_gamma1}});
    }
    const Json config = {
        {"command", "theory limit-check"},
        {"gamma0", o.params.gamma0},
        {"gamma1", o.params.gamma1},
        {"tau2_sq", o.params.tau2_sq},
        {"psi_sq", o.params.psi_sq},
        {"n_grid", o.n_grid},
        {"designs_per_n", o.designs_per_n},
        {"reference_n", o.reference_n},
        {"seed", o.seed},
    };
    return {
        {"metadata", make_metadata(config, o.seed)},
        {"config", config},
        {"limit_gamma0", t.limit.gamma0},
        {"limit_gamma1", t.limit.gamma1},
        {"rows", rows},
    };
}

Json cmd_make_design(std::size_t n, const theory::IndependenceParams& params, std::uint64_t seed,
                     const std::string& path) {
    const theory::DesignDraw draw = theory::gaussian_design_generator(params)(n, seed);
    write_design_csv(path, draw);
    const Json config = {{"command", "theory make-design"}, {"n", n},           {"gamma0", params.gamma0},
                         {"gamma1", params.gamma1},         {"tau2_sq", params.tau2_sq}, {"psi_sq", params.psi_sq},
                         {"seed", seed}};
    return {{"metadata", make_metadata(config, seed)}, {"config", config}, {"path", path}};
}

}  // namespace wprocova::cli
