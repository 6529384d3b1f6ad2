// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "wprocova/error.hpp"
#include "wprocova/estimators.hpp"
#include "wprocova/simulation.hpp"
#include "wprocova/theory.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace wprocova::cli {

using Json = nlohmann::json;

inline constexpr const char* kVersion = "0.1.0";
inline constexpr std::uint64_t kDefaultSeed = 20240101;

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t v);

/// Integral floats become integers so that 1 and 1.0 hash alike; object keys
/// are already sorted by the JSON type.
Json canonicalize(const Json& j);
std::string config_digest(const Json& config);

/// version, seed (or null), UTC timestamp and the config digest.
Json make_metadata(const Json& config, std::optional<std::uint64_t> seed);

Json error_object(ErrorKind kind, const std::string& message);

struct AnalyzeOptions {
    std::string csv_path;
    double alpha = 0.05;
    int iterations = 1;
    std::vector<Method> methods{Method::Unadjusted, Method::Procova, Method::WeightedProcova};
    Reference reference = Reference::Normal;
    double baseline_power = 0.8;
};

/// Runs the selected analyses. The unadjusted fit is always computed because
/// variance reductions and power boosts are quoted against it.
Json cmd_analyze(const AnalyzeOptions& options);
std::string render_analyze_table(const Json& report);

struct SeedChoice {
    std::uint64_t seed = kDefaultSeed;
    std::string source = "default";
};

/// Precedence: --seed flag, then WPROCOVA_SEED, then the config file.
SeedChoice resolve_seed(std::optional<std::uint64_t> flag, const char* env, std::optional<std::uint64_t> config);
std::uint64_t parse_seed(const std::string& text, const std::string& where);

struct Calibration {
    double target_power = 0.8;
    std::size_t reps_per_probe = 2000;
};

struct GridSpec {
    std::vector<sim::SimulationConfig> cells;
    std::optional<Calibration> calibrate;
    std::optional<std::uint64_t> seed;  // as written in the config
};

/// Expands a grid config. Errors are InvalidConfig with a JSON-pointer path.
GridSpec parse_grid_config(const Json& config);

struct SimulateOptions {
    std::string config_path;
    std::string out_dir;
    std::size_t parallelism = 1;
    std::optional<std::uint64_t> seed;
    const char* env_seed = nullptr;
};

/// Runs the grid and writes metrics.json, metrics.csv and plot_data.csv
/// into out_dir. Returns the metrics.json document.
Json cmd_simulate(const SimulateOptions& options);

struct PowerOptions {
    double baseline_var = 1.0;
    double candidate_var = 1.0;
    double effect = 1.0;
    double alpha = 0.05;
    double baseline_power = 0.8;
};

Json cmd_power(const PowerOptions& options);

/// Design file: header row, a `sigma2` column, an optional `log_s2` column;
/// every other column is a design column, in file order.
struct DesignFile {
    DesignMatrix V;
    Vector sigma2;
    std::optional<Vector> log_s2;
};

DesignFile read_design_csv(const std::string& path);
void write_design_csv(const std::string& path, const theory::DesignDraw& draw);

Json cmd_residual_moments(const std::string& design_path);
Json cmd_expected_gamma(const std::string& design_path, std::size_t mc_draws, std::uint64_t seed);

struct VarianceReductionOptions {
    theory::IndependenceParams params;
    std::optional<double> limit_gamma0;  // G = exp(g0 + g1 log s^2); defaults to the truth
    std::optional<double> limit_gamma1;
    bool constant_limit = false;         // G = 1
    std::size_t draws = 1'000'000;
    std::uint64_t seed = kDefaultSeed;
};

Json cmd_variance_reduction(const VarianceReductionOptions& options);

struct LimitCheckOptions {
    theory::IndependenceParams params;
    std::vector<std::size_t> n_grid{50, 100, 200, 500, 1000, 2000};
    std::size_t designs_per_n = 20;
    std::size_t reference_n = 5000;
    std::uint64_t seed = kDefaultSeed;
};

Json cmd_limit_check(const LimitCheckOptions& options);

Json cmd_make_design(std::size_t n, const theory::IndependenceParams& params, std::uint64_t seed,
                     const std::string& path);

void write_text(const std::string& path, const std::string& content);

/// JSON with 2-space indent and a trailing newline.
std::string dump(const Json& j);

}  // namespace wprocova::cli
