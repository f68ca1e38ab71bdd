#include "perfsim/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <limits>
#include <memory>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace perfsim {

using json = nlohmann::json;

namespace {

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    std::string out = s.substr(b, e - b + 1);
    if (out.size() >= 2 && out.front() == '"' && out.back() == '"') out = out.substr(1, out.size() - 2);
    return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    bool quoted = false;
    for (char c : line) {
        if (c == '"') {
            quoted = !quoted;
            cell.push_back(c);
        } else if (c == ',' && !quoted) {
            cells.push_back(trim(cell));
            cell.clear();
        } else {
            cell.push_back(c);
        }
    }
    cells.push_back(trim(cell));
    return cells;
}

bool parse_double(const std::string& text, double& out) {
    if (text.empty()) return false;
    char* end = nullptr;
    out = std::strtod(text.c_str(), &end);
    return end == text.c_str() + text.size() && std::isfinite(out);
}

// Numeric parameters each problem type understands.
const std::set<std::string>& known_params(const std::string& problem) {
    static const std::set<std::string> gaussian{"z_bar",     "sigma",     "epsilon", "rho",         "z0",
                                                "theta0",    "c0_factor", "c1_factor", "batch",     "br_per_iter",
                                                "learner_iters_per_agent_round"};
    static const std::set<std::string> strat{"m",         "d",         "epsilon",   "beta",  "participation",
                                             "alpha",     "theta0",    "c0_factor", "c1_factor", "batch",
                                             "br_per_iter", "learner_iters_per_agent_round"};
    if (problem == "gaussian") return gaussian;
    if (problem == "strat_class") return strat;
    throw ConfigError("unknown problem type '" + problem + "' (expected gaussian or strat_class)");
}

struct PresetDefaults {
    std::string problem;
    std::string kernel;
    std::string utility;
    std::map<std::string, double> params;
    std::string description;
};

const std::map<std::string, PresetDefaults>& presets() {
    static const std::map<std::string, PresetDefaults> table = [] {
        const std::map<std::string, double> strat_params{{"m", 200.0},         {"d", 3.0},
                                                         {"epsilon", 0.01},    {"participation", 5.0},
                                                         {"c0_factor", 100.0}, {"c1_factor", 8.0}};
        std::map<std::string, PresetDefaults> t;
        t["gaussian_ar"] = {"gaussian", "ar", "",
                            {{"z_bar", 10.0}, {"sigma", 50.0}, {"epsilon", 0.1}, {"rho", 0.5},
                             {"c0_factor", 500.0}, {"c1_factor", 800.0}},
                            "Gaussian mean estimation, AR(rho) agent; z_bar=10 sigma=50 eps=0.1, "
                            "gamma_k=(500/mu~)/(800/mu~^2+k)"};
        t["strat_class_linear"] = {"strat_class", "adapted", "quadratic", strat_params,
                                   "Strategic classification, linear utility U_q; beta=1000/m eps=0.01 |I_k|=5 "
                                   "alpha=0.5eps, gamma_k=(100/mu~)/(8L^2/mu~^2+k)"};
        t["strat_class_logistic"] = {"strat_class", "adapted", "logistic", strat_params,
                                     "Strategic classification, logistic utility U_lg; same constants as "
                                     "strat_class_linear"};
        t["custom"] = {"", "", "", {}, "No defaults: set problem, kernel, params and an explicit schedule"};
        return t;
    }();
    return table;
}

StepSchedule parse_schedule(const json& j) {
    if (!j.is_object()) throw ConfigError("schedule must be an object");
    const std::string kind = j.value("kind", "");
    try {
        if (kind == "constant") return StepSchedule::constant(j.at("gamma").get<double>());
        if (kind == "inverse") return StepSchedule::inverse(j.at("c0").get<double>(), j.at("c1").get<double>());
    } catch (const json::exception& e) {
        throw ConfigError(std::string("schedule: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    throw ConfigError("schedule.kind must be 'constant' or 'inverse'");
}

json schedule_json(const StepSchedule& s) {
    if (s.kind() == StepSchedule::Kind::constant) return {{"kind", "constant"}, {"gamma", s.c0()}};
    return {{"kind", "inverse"}, {"c0", s.c0()}, {"c1", s.c1()}};
}

double require_param(const std::map<std::string, double>& p, const std::string& name) {
    const auto it = p.find(name);
    if (it == p.end()) throw ConfigError("missing parameter '" + name + "'");
    return it->second;
}

double param_or(const std::map<std::string, double>& p, const std::string& name, double fallback) {
    const auto it = p.find(name);
    return it == p.end() ? fallback : it->second;
}

int positive_int(const std::map<std::string, double>& p, const std::string& name, int fallback) {
    const double v = param_or(p, name, fallback);
    if (!(v >= 1.0) || v != std::floor(v)) throw ConfigError("parameter '" + name + "' must be a positive integer");
    return static_cast<int>(v);
}

std::uint64_t trial_seed(std::uint64_t root, int trial) {
    return RngStream(root).derive(streams::trials).derive(static_cast<std::uint64_t>(trial)).seed();
}

ResolvedPoint resolve_gaussian(const ExperimentSpec& spec, std::map<std::string, double> p) {
    ResolvedPoint pt;
    GaussianEnv env{require_param(p, "z_bar"), require_param(p, "epsilon"), require_param(p, "sigma"),
                    param_or(p, "rho", 1.0)};
    try {
        env.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    pt.env = env;
    pt.loss = LossModel::quadratic();
    pt.constants = ProblemConstants(1.0, 1.0, env.epsilon, env.sigma);
    pt.theta0 = ParamVector{param_or(p, "theta0", 0.0)};
    pt.theta_ps = ParamVector{theta_ps_gaussian(env)};
    p["z0"] = param_or(p, "z0", env.z_bar);
    p["rho"] = env.rho;

    if (spec.schedule) {
        pt.schedule = *spec.schedule;
    } else {
        const double mt = pt.constants.mu_tilde();
        pt.schedule = StepSchedule::inverse(require_param(p, "c0_factor") / mt, require_param(p, "c1_factor") / (mt * mt));
    }
    pt.params = std::move(p);
    return pt;
}

ResolvedPoint resolve_strat(const ExperimentSpec& spec, std::map<std::string, double> p) {
    ResolvedPoint pt;
    const double eps = require_param(p, "epsilon");
    if (!(eps >= 0.0 && std::isfinite(eps))) throw ConfigError("epsilon must be >= 0");

    Dataset data;
    if (spec.csv) {
        data = load_csv(spec.csv->path, spec.csv->feature_columns, spec.csv->label_column);
        p["m"] = static_cast<double>(data.size());
        p["d"] = static_cast<double>(data.dim);
    } else {
        const int m = positive_int(p, "m", 0);
        const int d = positive_int(p, "d", 0);
        if (m < 2) throw ConfigError("m must be >= 2");
        data = generate_synthetic(static_cast<std::size_t>(d), static_cast<std::size_t>(m),
                                  RngStream(spec.seed).derive(streams::dataset).seed());
    }
    const double m = static_cast<double>(data.size());
    const double beta = param_or(p, "beta", 1000.0 / m);
    const double alpha = param_or(p, "alpha", 0.5 * eps);
    if (!(beta > 0.0)) throw ConfigError("beta must be > 0");
    if (!(alpha > 0.0)) throw ConfigError("alpha must be > 0 (epsilon = 0 needs an explicit alpha)");
    const int participation = positive_int(p, "participation", 1);
    if (static_cast<double>(participation) > m) throw ConfigError("participation exceeds the number of agents");
    p["beta"] = beta;
    p["alpha"] = alpha;
    p["participation"] = participation;

    const LogisticEstimates est = estimate_logistic_constants(data.samples, beta, eps);
    p["lipschitz_estimate"] = est.lipschitz;
    p["mu_tilde_estimate"] = est.mu_tilde;
    pt.loss = LossModel::reg_logistic(beta, est.lipschitz);
    pt.constants = ProblemConstants(beta, est.lipschitz, eps, 0.0);
    pt.utility = Utility{spec.utility == "logistic" ? UtilityKind::logistic : UtilityKind::quadratic, eps};
    pt.theta0 = ParamVector(data.dim, param_or(p, "theta0", 0.0));

    if (spec.schedule) {
        pt.schedule = *spec.schedule;
    } else {
        if (!(est.mu_tilde > 0.0)) throw ConfigError("estimated mu_tilde <= 0: no default schedule, supply one");
        const double mt = est.mu_tilde;
        pt.schedule = StepSchedule::inverse(require_param(p, "c0_factor") / mt,
                                            require_param(p, "c1_factor") * est.lipschitz * est.lipschitz / (mt * mt));
    }

    BestResponseOptions br;
    br.tol = 1e-12;
    br.max_inner = 100000;
    pt.theta_ps = theta_ps_fixed_point(pt.loss, pool_distribution(data.samples, pt.utility, br),
                                       ParamVector(data.dim, 0.0))
                      .theta;
    pt.data = std::move(data);
    pt.params = std::move(p);
    return pt;
}

std::unique_ptr<Kernel> make_kernel(const ExperimentSpec& spec, const ResolvedPoint& pt) {
    if (spec.problem == "gaussian") {
        if (spec.kernel == "iid") return std::make_unique<GaussianIidKernel>(*pt.env);
        return std::make_unique<GaussianArKernel>(*pt.env, pt.params.at("z0"));
    }
    if (spec.kernel == "exact") return std::make_unique<ExactResponseKernel>(pt.data->samples, pt.utility);
    return std::make_unique<AdaptedPoolKernel>(AgentPool(pt.data->samples, pt.utility, pt.params.at("alpha"),
                                                         static_cast<std::size_t>(pt.params.at("participation"))));
}

RunConfig make_run_config(const ExperimentSpec& spec, const ResolvedPoint& pt, std::uint64_t seed,
                          const std::vector<std::int64_t>& grid) {
    RunConfig cfg;
    cfg.theta0 = pt.theta0;
    cfg.schedule = pt.schedule;
    cfg.horizon = spec.horizon;
    cfg.batch = static_cast<std::size_t>(positive_int(pt.params, "batch", 1));
    cfg.br_per_iter = positive_int(pt.params, "br_per_iter", 1);
    cfg.learner_iters_per_agent_round = positive_int(pt.params, "learner_iters_per_agent_round", 1);
    cfg.trials = spec.trials;
    cfg.seed = seed;
    cfg.record_at = grid;
    if (spec.problem == "gaussian" && spec.kernel == "ar" && cfg.batch != 1)
        throw ConfigError("the AR kernel emits one sample per step; batch must be 1");
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

std::string point_label(const std::vector<SweepAxis>& sweep, const std::vector<double>& values) {
    std::string label;
    for (std::size_t a = 0; a < sweep.size(); ++a) {
        if (!label.empty()) label += ",";
        label += sweep[a].param + "=" + fmt_short(values[a]);
    }
    return label;
}

}  // namespace

void standardize(Dataset& data) {
    if (data.samples.empty()) return;
    const double n = static_cast<double>(data.samples.size());
    for (std::size_t c = 0; c < data.dim; ++c) {
        double mean = 0.0;
        for (const Sample& s : data.samples) mean += s.features[c];
        mean /= n;
        double var = 0.0;
        for (const Sample& s : data.samples) var += (s.features[c] - mean) * (s.features[c] - mean);
        const double sd = std::sqrt(var / n);
        for (Sample& s : data.samples) {
            s.features[c] -= mean;
            if (sd > 0.0) s.features[c] /= sd;
        }
    }
}

Dataset generate_synthetic(std::size_t d, std::size_t m, std::uint64_t seed) {
    if (d < 1) throw std::invalid_argument("generate_synthetic: d must be >= 1");
    if (m < 2) throw std::invalid_argument("generate_synthetic: m must be >= 2");
    RngStream rng(seed);
    const double shift = 1.0 / std::sqrt(static_cast<double>(d));
    Dataset data;
    data.dim = d;
    data.samples.reserve(m);
    for (std::size_t i = 0; i < m; ++i) {
        const int y = static_cast<int>(i % 2);
        std::vector<double> x(d);
        for (double& v : x) v = (y == 1 ? shift : -shift) + rng.normal();
        data.samples.push_back(Sample::labeled(std::move(x), y));
    }
    for (std::size_t i = m - 1; i > 0; --i) std::swap(data.samples[i], data.samples[rng.uniform_index(i + 1)]);
    standardize(data);
    return data;
}

Dataset load_csv(const std::filesystem::path& path, const std::vector<std::string>& feature_columns,
                 const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_csv: cannot open " + path.string());
    if (feature_columns.empty()) throw std::invalid_argument("load_csv: no feature columns requested");

    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("load_csv: " + path.string() + " is empty");
    const std::vector<std::string> header = split_csv_line(line);
    auto column_index = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw std::runtime_error("load_csv: missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    };
    std::vector<std::size_t> feature_idx;
    for (const std::string& c : feature_columns) feature_idx.push_back(column_index(c));
    const std::size_t label_idx = column_index(label_column);

    Dataset data;
    data.dim = feature_columns.size();
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::vector<std::string> cells = split_csv_line(line);
        auto cell = [&](std::size_t idx, const std::string& name) {
            if (idx >= cells.size())
                throw std::runtime_error("load_csv: line " + std::to_string(line_no) + ": missing value for '" + name +
                                         "'");
            double v;
            if (!parse_double(cells[idx], v))
                throw std::runtime_error("load_csv: line " + std::to_string(line_no) + ": cannot parse '" +
                                         cells[idx] + "' in column '" + name + "'");
            return v;
        };
        std::vector<double> x;
        for (std::size_t c = 0; c < feature_idx.size(); ++c) x.push_back(cell(feature_idx[c], feature_columns[c]));
        const double y = cell(label_idx, label_column);
        if (y != 0.0 && y != 1.0)
            throw std::runtime_error("load_csv: line " + std::to_string(line_no) + ": label must be 0 or 1");
        data.samples.push_back(Sample::labeled(std::move(x), static_cast<int>(y)));
    }
    if (data.samples.empty()) throw std::runtime_error("load_csv: " + path.string() + " has no data rows");
    standardize(data);
    return data;
}

void write_csv(const Dataset& data, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
    for (std::size_t c = 0; c < data.dim; ++c) out << 'x' << c << ',';
    out << "label\n";
    for (const Sample& s : data.samples) {
        for (double v : s.features) out << fmt17(v) << ',';
        out << s.label.value_or(0) << '\n';
    }
}

std::vector<std::string> preset_names() {
    std::vector<std::string> names;
    for (const auto& [name, _] : presets()) names.push_back(name);
    return names;
}

std::string describe_presets() {
    std::ostringstream os;
    for (const auto& [name, p] : presets()) os << name << "  " << p.description << '\n';
    return os.str();
}

ExperimentSpec parse_spec(const std::string& json_text, const SpecOverrides& overrides) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    if (overrides.seed) j["seed"] = *overrides.seed;
    if (overrides.trials) j["trials"] = *overrides.trials;
    if (overrides.horizon) j["horizon"] = *overrides.horizon;
    if (overrides.output_dir) j["output_dir"] = *overrides.output_dir;

    static const std::set<std::string> top_keys{"preset", "problem", "kernel",  "utility", "params",  "schedule",
                                                "data",   "horizon", "trials",  "seed",    "threads", "sweep",
                                                "output_dir"};
    for (const auto& [key, _] : j.items()) {
        if (!top_keys.count(key)) throw ConfigError("unknown config key '" + key + "'");
    }

    ExperimentSpec spec;
    try {
        spec.preset = j.value("preset", "custom");
        const auto pit = presets().find(spec.preset);
        if (pit == presets().end()) throw ConfigError("unknown preset '" + spec.preset + "'");
        const PresetDefaults& def = pit->second;

        spec.problem = j.value("problem", def.problem);
        if (spec.problem.empty()) throw ConfigError("custom preset requires 'problem'");
        const std::set<std::string>& allowed = known_params(spec.problem);
        if (!def.problem.empty() && spec.problem != def.problem)
            throw ConfigError("preset '" + spec.preset + "' is a " + def.problem + " problem");

        spec.kernel = j.value("kernel", def.kernel);
        if (spec.kernel.empty()) spec.kernel = spec.problem == "gaussian" ? "ar" : "adapted";
        if (spec.problem == "gaussian" && spec.kernel != "ar" && spec.kernel != "iid")
            throw ConfigError("gaussian kernel must be 'ar' or 'iid'");
        if (spec.problem == "strat_class" && spec.kernel != "adapted" && spec.kernel != "exact")
            throw ConfigError("strat_class kernel must be 'adapted' or 'exact'");

        spec.utility = j.value("utility", def.utility);
        if (spec.problem == "strat_class" && spec.utility != "quadratic" && spec.utility != "logistic")
            throw ConfigError("strat_class utility must be 'quadratic' or 'logistic'");

        spec.params = def.params;
        if (j.contains("params")) {
            if (!j["params"].is_object()) throw ConfigError("params must be an object");
            for (const auto& [key, value] : j["params"].items()) {
                if (!allowed.count(key)) throw ConfigError("unknown parameter '" + key + "' for " + spec.problem);
                if (!value.is_number()) throw ConfigError("parameter '" + key + "' must be a number");
                spec.params[key] = value.get<double>();
            }
        }
        if (j.contains("schedule")) spec.schedule = parse_schedule(j["schedule"]);
        if (spec.preset == "custom" && !spec.schedule) throw ConfigError("custom preset requires an explicit schedule");

        if (j.contains("data")) {
            const json& d = j["data"];
            const std::string source = d.value("source", "synthetic");
            if (source == "csv") {
                if (spec.problem != "strat_class") throw ConfigError("csv data only applies to strat_class");
                spec.csv = CsvSource{d.at("path").get<std::string>(), d.at("features").get<std::vector<std::string>>(),
                                     d.at("label").get<std::string>()};
            } else if (source != "synthetic") {
                throw ConfigError("data.source must be 'synthetic' or 'csv'");
            }
        }

        spec.horizon = j.value("horizon", spec.horizon);
        spec.trials = j.value("trials", spec.trials);
        spec.seed = j.value("seed", spec.seed);
        spec.threads = j.value("threads", spec.threads);
        spec.output_dir = j.value("output_dir", spec.output_dir.string());
        if (spec.horizon < 0) throw ConfigError("horizon must be >= 0");
        if (spec.trials < 1) throw ConfigError("trials must be >= 1");
        if (spec.threads < 0) throw ConfigError("threads must be >= 0");

        if (j.contains("sweep")) {
            if (!j["sweep"].is_array()) throw ConfigError("sweep must be an array");
            for (const json& axis : j["sweep"]) {
                SweepAxis a{axis.at("param").get<std::string>(), axis.at("values").get<std::vector<double>>()};
                if (!allowed.count(a.param)) throw ConfigError("sweep parameter '" + a.param + "' is not a field");
                if (a.values.empty()) throw ConfigError("sweep parameter '" + a.param + "' has no values");
                spec.sweep.push_back(std::move(a));
            }
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }

    json echo = j;
    echo["preset"] = spec.preset;
    echo["problem"] = spec.problem;
    echo["kernel"] = spec.kernel;
    if (!spec.utility.empty()) echo["utility"] = spec.utility;
    echo["params"] = spec.params;
    echo["horizon"] = spec.horizon;
    echo["trials"] = spec.trials;
    echo["seed"] = spec.seed;
    echo["output_dir"] = spec.output_dir.string();
    spec.config_echo = echo.dump();
    return spec;
}

std::vector<ResolvedPoint> resolve_points(const ExperimentSpec& spec) {
    std::vector<std::vector<double>> combos{{}};
    for (const SweepAxis& axis : spec.sweep) {
        std::vector<std::vector<double>> next;
        for (const auto& prefix : combos) {
            for (double v : axis.values) {
                auto c = prefix;
                c.push_back(v);
                next.push_back(std::move(c));
            }
        }
        combos = std::move(next);
    }

    std::vector<ResolvedPoint> points;
    for (const auto& values : combos) {
        std::map<std::string, double> p = spec.params;
        for (std::size_t a = 0; a < spec.sweep.size(); ++a) p[spec.sweep[a].param] = values[a];
        ResolvedPoint pt = spec.problem == "gaussian" ? resolve_gaussian(spec, std::move(p)) : resolve_strat(spec, std::move(p));
        pt.label = point_label(spec.sweep, values);
        points.push_back(std::move(pt));
    }
    return points;
}

std::vector<std::int64_t> checkpoint_grid(std::int64_t horizon) {
    std::vector<std::int64_t> grid;
    for (std::int64_t k = 0; k <= std::min<std::int64_t>(horizon, 1000); ++k) grid.push_back(k);
    double g = 1.0;
    while (true) {
        g *= 1.05;
        const auto k = static_cast<std::int64_t>(std::ceil(g));
        if (k > horizon) break;
        if (k > grid.back()) grid.push_back(k);
    }
    if (grid.back() != horizon) grid.push_back(horizon);
    return grid;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

ExperimentResult execute_experiment(const ExperimentSpec& spec) {
    std::vector<ResolvedPoint> points = resolve_points(spec);
    const std::vector<std::int64_t> grid = checkpoint_grid(spec.horizon);

    // Validate every run configuration before spawning work.
    std::vector<RunConfig> base_configs;
    for (const ResolvedPoint& pt : points) base_configs.push_back(make_run_config(spec, pt, 0, grid));

    const std::size_t n_trials = static_cast<std::size_t>(spec.trials);
    std::vector<std::vector<std::optional<RunTrace>>> traces(points.size(),
                                                             std::vector<std::optional<RunTrace>>(n_trials));
    const std::size_t jobs = points.size() * n_trials;
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;
    auto worker = [&] {
        for (std::size_t job = next++; job < jobs; job = next++) {
            const std::size_t p = job / n_trials;
            const std::size_t t = job % n_trials;
            RunConfig cfg = base_configs[p];
            cfg.seed = trial_seed(spec.seed, static_cast<int>(t));
            try {
                std::unique_ptr<Kernel> kernel = make_kernel(spec, points[p]);
                traces[p][t] = lazy_run(points[p].loss, *kernel, cfg, points[p].theta_ps);
            } catch (const DivergenceError&) {
                traces[p][t].reset();
            } catch (const BestResponseError&) {
                traces[p][t].reset();
            } catch (...) {
                const std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    unsigned n_threads = spec.threads > 0 ? static_cast<unsigned>(spec.threads) : std::thread::hardware_concurrency();
    n_threads = std::max(1u, std::min<unsigned>(n_threads, static_cast<unsigned>(jobs)));
    std::vector<std::thread> pool;
    for (unsigned i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);

    ExperimentResult result;
    bool any_survived = false;
    for (std::size_t p = 0; p < points.size(); ++p) {
        PointSummary s;
        s.ks = grid;
        s.trial_errors.resize(n_trials);
        const RunTrace* first = nullptr;
        for (std::size_t t = 0; t < n_trials; ++t) {
            if (!traces[p][t]) {
                s.diverged_trials.push_back(static_cast<int>(t));
                continue;
            }
            if (!first) first = &*traces[p][t];
            for (const TraceRecord& r : traces[p][t]->records) s.trial_errors[t].push_back(r.error);
        }
        const double nan = std::numeric_limits<double>::quiet_NaN();
        for (std::size_t i = 0; i < grid.size(); ++i) {
            std::vector<double> errs;
            for (std::size_t t = 0; t < n_trials; ++t) {
                if (traces[p][t]) errs.push_back(s.trial_errors[t][i]);
            }
            s.samples_drawn.push_back(first ? first->records[i].samples_drawn : 0);
            s.agent_updates.push_back(first ? first->records[i].agent_updates : 0);
            if (errs.empty()) {
                s.err_mean.push_back(nan);
                s.err_p05.push_back(nan);
                s.err_p95.push_back(nan);
                continue;
            }
            double mean = 0.0;
            for (double e : errs) mean += e;
            s.err_mean.push_back(mean / static_cast<double>(errs.size()));
            s.err_p05.push_back(quantile(errs, 0.05));
            s.err_p95.push_back(quantile(errs, 0.95));
        }
        if (first) {
            any_survived = true;
            const std::int64_t k_hi = spec.horizon;
            const std::int64_t k_lo = std::max<std::int64_t>(1, k_hi / 100);
            if (k_hi > k_lo) {
                try {
                    s.rate_fit = fit_rate(s.ks, s.err_mean, k_lo, k_hi);
                } catch (const std::invalid_argument&) {
                    // Exact convergence (zero error) leaves no log-log slope.
                }
            }
        }
        s.point = std::move(points[p]);
        result.points.push_back(std::move(s));
    }
    result.exit_code = any_survived ? 0 : 2;
    return result;
}

void write_results(const ExperimentSpec& spec, const ExperimentResult& result) {
    std::filesystem::create_directories(spec.output_dir);

    std::ofstream trace(spec.output_dir / "trace.csv", std::ios::binary);
    if (!trace) throw std::runtime_error("cannot write " + (spec.output_dir / "trace.csv").string());
    static const char* columns[] = {"samples_drawn", "agent_updates", "err_mean", "err_p05", "err_p95"};
    trace << "k";
    for (const PointSummary& s : result.points) {
        const std::string prefix = s.point.label.empty() ? "" : s.point.label + "/";
        for (const char* c : columns) trace << ',' << prefix << c;
    }
    trace << '\n';
    const std::vector<std::int64_t>& ks = result.points.front().ks;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        trace << ks[i];
        for (const PointSummary& s : result.points) {
            trace << ',' << s.samples_drawn[i] << ',' << s.agent_updates[i] << ',' << fmt17(s.err_mean[i]) << ','
                  << fmt17(s.err_p05[i]) << ',' << fmt17(s.err_p95[i]);
        }
        trace << '\n';
    }

    json points = json::array();
    for (const PointSummary& s : result.points) {
        const ResolvedPoint& pt = s.point;
        json fit = nullptr;
        if (s.rate_fit) {
            fit = {{"slope", s.rate_fit->slope},
                   {"intercept", s.rate_fit->intercept},
                   {"r2", s.rate_fit->r2},
                   {"k_lo", s.rate_fit->k_lo},
                   {"k_hi", s.rate_fit->k_hi}};
        }
        json final_error = nullptr;
        if (std::isfinite(s.err_mean.back())) final_error = s.err_mean.back();
        points.push_back({{"label", pt.label},
                          {"params", pt.params},
                          {"theta_ps", pt.theta_ps.values()},
                          {"theta0", pt.theta0.values()},
                          {"schedule", schedule_json(pt.schedule)},
                          {"constants",
                           {{"mu", pt.constants.mu()},
                            {"lipschitz", pt.constants.lipschitz()},
                            {"sensitivity", pt.constants.sensitivity()},
                            {"sigma_noise", pt.constants.sigma_noise()},
                            {"mu_tilde", pt.constants.mu_tilde()}}},
                          {"rate_fit", fit},
                          {"final_err_mean", final_error},
                          {"diverged_trials", s.diverged_trials},
                          {"all_diverged", s.diverged_trials.size() == static_cast<std::size_t>(spec.trials)}});
    }
    const PointSummary& head = result.points.front();
    json summary = {{"schema", 1},
                    {"preset", spec.preset},
                    {"problem", spec.problem},
                    {"kernel", spec.kernel},
                    {"seed", spec.seed},
                    {"trials", spec.trials},
                    {"horizon", spec.horizon},
                    {"theta_ps", head.point.theta_ps.values()},
                    {"rate_fit_slope", head.rate_fit ? json(head.rate_fit->slope) : json(nullptr)},
                    {"schedule", schedule_json(head.point.schedule)},
                    {"points", points},
                    {"config", json::parse(spec.config_echo)}};
    std::ofstream out(spec.output_dir / "summary.json", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (spec.output_dir / "summary.json").string());
    out << summary.dump(2) << '\n';
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
    ExperimentResult result = execute_experiment(spec);
    write_results(spec, result);
    return result;
}

}  // namespace perfsim
