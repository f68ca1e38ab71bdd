#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "perfsim/agents.hpp"
#include "perfsim/oracle.hpp"
#include "perfsim/solver.hpp"

namespace perfsim {

/// Invalid experiment configuration (CLI exit code 1).
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Dataset {
    std::vector<Sample> samples;
    std::size_t dim = 0;

    std::size_t size() const { return samples.size(); }
};

/// Rescales every feature coordinate to zero mean and unit (population)
/// variance. Constant coordinates are only centered.
void standardize(Dataset& data);

/// Two class-conditional Gaussians N(+/- u, I) with u = (1, ..., 1)/sqrt(d),
/// labels alternating so the class counts differ by at most one, rows
/// shuffled, features standardized. Throws std::invalid_argument for d < 1 or
/// m < 2.
Dataset generate_synthetic(std::size_t d, std::size_t m, std::uint64_t seed);

/// Reads a header-first CSV, keeps the named feature columns and a {0,1}
/// label column, and standardizes the features. Errors name the missing
/// column or the offending line number.
Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_columns,
                 const std::string& label_column);

/// Writes features as x0..x{d-1} plus `label`, 17 significant digits.
void write_csv(const Dataset& data, const std::filesystem::path& path);

struct SweepAxis {
    std::string param;
    std::vector<double> values;
};

struct CsvSource {
    std::filesystem::path path;
    std::vector<std::string> feature_columns;
    std::string label_column;
};

struct ExperimentSpec {
    std::string preset;   // gaussian_ar | strat_class_linear | strat_class_logistic | custom
    std::string problem;  // gaussian | strat_class
    std::string kernel;   // gaussian: ar | iid; strat_class: adapted | exact
    std::string utility;  // strat_class only: quadratic | logistic
    std::map<std::string, double> params;
    std::optional<StepSchedule> schedule;  // overrides the preset-derived schedule
    std::optional<CsvSource> csv;
    std::int64_t horizon = 1000;
    int trials = 1;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency
    std::vector<SweepAxis> sweep;
    std::filesystem::path output_dir = "perfsim_out";
    std::string config_echo;  // resolved configuration as JSON text
};

/// Names of the built-in presets.
std::vector<std::string> preset_names();
/// One-line description per preset, for `perfsim presets`.
std::string describe_presets();

/// Command-line overrides applied on top of the config file.
struct SpecOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> trials;
    std::optional<std::int64_t> horizon;
    std::optional<std::string> output_dir;
};

/// Builds a spec from JSON text. Unknown keys, unknown sweep parameters and
/// out-of-range values raise ConfigError.
ExperimentSpec parse_spec(const std::string& json_text, const SpecOverrides& overrides = {});

/// One fully resolved problem instance (one sweep point).
struct ResolvedPoint {
    std::string label;
    std::map<std::string, double> params;
    LossModel loss = LossModel::quadratic();
    ProblemConstants constants{1.0, 1.0, 0.0, 0.0};
    StepSchedule schedule = StepSchedule::constant(0.0);
    ParamVector theta0;
    ParamVector theta_ps;
    std::optional<GaussianEnv> env;
    std::optional<Dataset> data;
    Utility utility;
};

/// Expands the sweep (cartesian product, first axis slowest) and resolves
/// constants, schedule and theta_ps for every point.
std::vector<ResolvedPoint> resolve_points(const ExperimentSpec& spec);

/// Record grid: every k up to 1000, then ceil(1.05^j), always ending at K.
std::vector<std::int64_t> checkpoint_grid(std::int64_t horizon);

struct PointSummary {
    ResolvedPoint point;
    std::vector<std::int64_t> ks;
    std::vector<std::int64_t> samples_drawn;
    std::vector<std::int64_t> agent_updates;
    std::vector<double> err_mean;
    std::vector<double> err_p05;
    std::vector<double> err_p95;
    std::vector<int> diverged_trials;
    std::vector<std::vector<double>> trial_errors;  // [trial][checkpoint]; empty rows for diverged trials
    std::optional<RateFit> rate_fit;
};

struct ExperimentResult {
    std::vector<PointSummary> points;
    int exit_code = 0;  // 0 ok, 2 every trial of every point diverged
};

/// Runs every sweep point x trial concurrently and aggregates the traces.
/// Does not touch the filesystem.
ExperimentResult execute_experiment(const ExperimentSpec& spec);

/// Writes trace.csv and summary.json into spec.output_dir.
void write_results(const ExperimentSpec& spec, const ExperimentResult& result);

/// execute_experiment followed by write_results.
ExperimentResult run_experiment(const ExperimentSpec& spec);

/// Empirical quantile with linear interpolation between order statistics.
double quantile(std::vector<double> values, double q);

}  // namespace perfsim
