// perfsim: run performative-prediction experiments from a JSON config.
//
//   perfsim presets
//   perfsim run    --config exp.json [--seed N] [--trials N] [--horizon K] [--out DIR]
//   perfsim oracle --config exp.json
//
// Exit codes: 0 success, 1 configuration error, 2 every trial diverged.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "perfsim/harness.hpp"

namespace {

constexpr int kConfigError = 1;

std::string read_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw perfsim::ConfigError("cannot open config file " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct CommonArgs {
    std::string config;
    perfsim::SpecOverrides overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config,-c", args.config, "Experiment config (JSON)")->required();
    cmd->add_option_function<std::uint64_t>(
        "--seed", [&args](const std::uint64_t& v) { args.overrides.seed = v; }, "Override the root seed");
    cmd->add_option_function<int>(
        "--trials", [&args](const int& v) { args.overrides.trials = v; }, "Override the number of trials");
    cmd->add_option_function<std::int64_t>(
        "--horizon", [&args](const std::int64_t& v) { args.overrides.horizon = v; }, "Override the iteration count");
    cmd->add_option_function<std::string>(
        "--out", [&args](const std::string& v) { args.overrides.output_dir = v; }, "Override the output directory");
}

std::string format_vector(const perfsim::ParamVector& v) {
    std::string out;
    char buf[40];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", v[i]);
        if (i) out += ' ';
        out += buf;
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic approximation experiments for performative prediction"};
    app.require_subcommand(1);

    CommonArgs run_args;
    CLI::App* run = app.add_subcommand("run", "Run an experiment and write trace.csv / summary.json");
    add_common(run, run_args);

    CommonArgs oracle_args;
    CLI::App* oracle = app.add_subcommand("oracle", "Print the performative stable point of a config");
    add_common(oracle, oracle_args);

    app.add_subcommand("presets", "List built-in presets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kConfigError;
    }

    try {
        if (app.got_subcommand("presets")) {
            std::cout << perfsim::describe_presets();
            return 0;
        }
        if (app.got_subcommand("oracle")) {
            const perfsim::ExperimentSpec spec = perfsim::parse_spec(read_file(oracle_args.config), oracle_args.overrides);
            const auto points = perfsim::resolve_points(spec);
            for (const auto& pt : points) {
                if (!pt.label.empty()) std::cout << pt.label << ": ";
                std::cout << format_vector(pt.theta_ps) << '\n';
            }
            return 0;
        }
        const perfsim::ExperimentSpec spec = perfsim::parse_spec(read_file(run_args.config), run_args.overrides);
        const perfsim::ExperimentResult result = perfsim::run_experiment(spec);
        for (const auto& s : result.points) {
            std::cout << (s.point.label.empty() ? spec.preset : s.point.label) << ": theta_ps = ["
                      << format_vector(s.point.theta_ps) << "]";
            if (s.rate_fit) std::cout << ", slope = " << s.rate_fit->slope;
            if (!s.diverged_trials.empty()) std::cout << ", diverged trials = " << s.diverged_trials.size();
            std::cout << '\n';
        }
        std::cout << "wrote " << (spec.output_dir / "trace.csv").string() << " and "
                  << (spec.output_dir / "summary.json").string() << '\n';
        if (result.exit_code != 0) std::cerr << "error: every trial diverged\n";
        return result.exit_code;
    } catch (const perfsim::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    }
}
