// SPDX-License-Identifier: Apache-2.0
#include "wprocova/commands.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <sstream>

namespace {

using namespace wprocova;
using cli::Json;

std::vector<Method> parse_methods(const std::string& list) {
    std::vector<Method> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(method_from_string(item));
    }
    return out;
}

std::vector<std::size_t> parse_sizes(const std::string& list) {
    std::vector<std::size_t> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(static_cast<std::size_t>(cli::parse_seed(item, "--n-grid")));
    }
    return out;
}

std::uint64_t seed_or_env(const std::optional<std::uint64_t>& flag) {
    return cli::resolve_seed(flag, std::getenv("WPROCOVA_SEED"), std::nullopt).seed;
}

void emit(const Json& report, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << cli::dump(report);
    } else {
        cli::write_text(out_path, cli::dump(report));
    }
}

void print_warnings(const Json& report) {
    if (!report.contains("warnings")) return;
    for (const Json& w : report.at("warnings")) {
        std::cerr << "warning [" << w.at("kind").get<std::string>() << "]: " << w.at("message").get<std::string>()
                  << '\n';
    }
}

void add_independence_options(CLI::App* app, theory::IndependenceParams& p) {
    app->add_option("--gamma0", p.gamma0, "skedastic intercept");
    app->add_option("--gamma1", p.gamma1, "skedastic slope on log twin variance");
    app->add_option("--tau2-sq", p.tau2_sq, "variance of log twin variance");
    app->add_option("--psi-sq", p.psi_sq, "skedastic noise variance");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Weighted PROCOVA analysis, simulation and theory checks"};
    app.set_version_flag("--version", std::string(cli::kVersion));
    app.require_subcommand(1);
    std::string out_path;

    cli::AnalyzeOptions analyze;
    std::string methods = "unadjusted,procova,wprocova";
    std::string reference = "normal";
    auto* a = app.add_subcommand("analyze", "analyze a trial CSV");
    a->add_option("--csv", analyze.csv_path, "trial CSV")->required();
    a->add_option("--alpha", analyze.alpha, "two-sided level");
    a->add_option("--iterations", analyze.iterations, "reweighting iterations")->check(CLI::PositiveNumber);
    a->add_option("--methods", methods, "comma-separated: unadjusted,procova,wprocova");
    a->add_option("--reference", reference, "normal or t")->check(CLI::IsMember({"normal", "t", "student_t"}));
    a->add_option("--baseline-power", analyze.baseline_power, "power of the unadjusted analysis");
    a->add_option("--out", out_path, "write the JSON report here and print a table");

    cli::SimulateOptions simulate;
    std::optional<std::uint64_t> sim_seed;
    auto* s = app.add_subcommand("simulate", "run a simulation grid");
    s->add_option("--config", simulate.config_path, "grid config (JSON)")->required();
    s->add_option("--out-dir", simulate.out_dir, "output directory")->required();
    s->add_option("--parallelism", simulate.parallelism, "worker threads")->check(CLI::PositiveNumber);
    s->add_option("--seed", sim_seed, "master seed");

    cli::PowerOptions power;
    auto* p = app.add_subcommand("power", "prospective power from two variances");
    p->add_option("--baseline-var", power.baseline_var)->required();
    p->add_option("--candidate-var", power.candidate_var)->required();
    p->add_option("--effect", power.effect);
    p->add_option("--alpha", power.alpha);
    p->add_option("--baseline-power", power.baseline_power);
    p->add_option("--out", out_path);

    auto* t = app.add_subcommand("theory", "theory checks");
    t->require_subcommand(1);
    std::string design_path;
    std::optional<std::uint64_t> theory_seed;

    auto* rm = t->add_subcommand("residual-moments", "exact residual moments for a design file");
    rm->add_option("--design", design_path)->required();
    rm->add_option("--out", out_path);

    std::size_t mc_draws = 0;
    auto* eg = t->add_subcommand("expected-gamma", "expected skedastic coefficients for a design file");
    eg->add_option("--design", design_path)->required();
    eg->add_option("--mc-draws", mc_draws, "Monte Carlo draws for the coefficient variances (0 skips)");
    eg->add_option("--seed", theory_seed);
    eg->add_option("--out", out_path);

    cli::VarianceReductionOptions vr;
    auto* vrc = t->add_subcommand("variance-reduction", "asymptotic variance reduction");
    add_independence_options(vrc, vr.params);
    vrc->add_option("--limit-gamma0", vr.limit_gamma0, "intercept of the limiting skedastic fit");
    vrc->add_option("--limit-gamma1", vr.limit_gamma1, "slope of the limiting skedastic fit");
    vrc->add_flag("--constant-limit", vr.constant_limit, "unit weights");
    vrc->add_option("--draws", vr.draws);
    vrc->add_option("--seed", theory_seed);
    vrc->add_option("--out", out_path);

    cli::LimitCheckOptions lc;
    std::string n_grid;
    auto* lcc = t->add_subcommand("limit-check", "large-N convergence of the expected skedastic slope");
    add_independence_options(lcc, lc.params);
    lcc->add_option("--n-grid", n_grid, "comma-separated sample sizes");
    lcc->add_option("--designs-per-n", lc.designs_per_n);
    lcc->add_option("--reference-n", lc.reference_n);
    lcc->add_option("--seed", theory_seed);
    lcc->add_option("--out", out_path);

    theory::IndependenceParams md_params;
    std::size_t md_n = 20;
    std::string md_path;
    auto* md = t->add_subcommand("make-design", "write a generated design file");
    add_independence_options(md, md_params);
    md->add_option("--n", md_n)->check(CLI::PositiveNumber);
    md->add_option("--design", md_path, "path to write")->required();
    md->add_option("--seed", theory_seed);
    md->add_option("--out", out_path);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        Json report;
        if (a->parsed()) {
            analyze.methods = parse_methods(methods);
            analyze.reference = reference == "normal" ? Reference::Normal : Reference::StudentT;
            report = cli::cmd_analyze(analyze);
            print_warnings(report);
            emit(report, out_path);
            if (!out_path.empty()) std::cout << cli::render_analyze_table(report);
        } else if (s->parsed()) {
            simulate.seed = sim_seed;
            simulate.env_seed = std::getenv("WPROCOVA_SEED");
            report = cli::cmd_simulate(simulate);
            print_warnings(report);
            std::cout << cli::dump(report.at("metadata"));
        } else if (p->parsed()) {
            emit(cli::cmd_power(power), out_path);
        } else if (rm->parsed()) {
            emit(cli::cmd_residual_moments(design_path), out_path);
        } else if (eg->parsed()) {
            emit(cli::cmd_expected_gamma(design_path, mc_draws, seed_or_env(theory_seed)), out_path);
        } else if (vrc->parsed()) {
            vr.seed = seed_or_env(theory_seed);
            emit(cli::cmd_variance_reduction(vr), out_path);
        } else if (lcc->parsed()) {
            if (!n_grid.empty()) lc.n_grid = parse_sizes(n_grid);
            lc.seed = seed_or_env(theory_seed);
            emit(cli::cmd_limit_check(lc), out_path);
        } else if (md->parsed()) {
            emit(cli::cmd_make_design(md_n, md_params, seed_or_env(theory_seed), md_path), out_path);
        }
    } catch (const Error& e) {
        std::cout << cli::dump(cli::error_object(e.kind(), e.what()));
        return 1;
    } catch (const std::exception& e) {
        std::cout << cli::dump(Json{{"error", {{"kind", "Internal"}, {"message", e.what()}}}});
        return 1;
    }
    return 0;
}
