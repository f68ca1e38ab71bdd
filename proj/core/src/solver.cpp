#include "perfsim/solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace perfsim {

namespace {

constexpr double kDivergenceNorm = 1e12;

class Recorder {
public:
    Recorder(const RunConfig& config, const ParamVector& theta_ps) : config_(config), theta_ps_(theta_ps) {
        trace_.records.reserve(config.record_at.empty() ? static_cast<std::size_t>(config.horizon + 1)
                                                        : config.record_at.size());
    }

    void offer(std::int64_t k, const ParamVector& theta, std::int64_t samples, std::int64_t updates) {
        if (!config_.record_at.empty()) {
            if (next_ >= config_.record_at.size() || config_.record_at[next_] != k) return;
            ++next_;
        }
        trace_.records.push_back({k, squared_distance(theta.span(), theta_ps_.span()), samples, updates});
    }

    RunTrace finish(ParamVector theta) {
        trace_.final_theta = std::move(theta);
        return std::move(trace_);
    }

private:
    const RunConfig& config_;
    const ParamVector& theta_ps_;
    RunTrace trace_;
    std::size_t next_ = 0;
};

RunTrace run_loop(const LossModel& loss, Kernel& kernel, const RunConfig& config, const ParamVector& theta_ps,
                  int learner_iters_per_round) {
    config.validate();
    if (theta_ps.size() != config.theta0.size()) throw std::invalid_argument("run: theta_ps dimension mismatch");

    const RngStream root(config.seed);
    RngStream agent_rng = root.derive(streams::agents);
    RngStream learner_rng = root.derive(streams::learner);

    ParamVector theta = config.theta0;
    ParamVector g(theta.size());
    std::vector<Sample> batch;
    batch.reserve(config.batch);

    std::int64_t samples = 0;
    std::int64_t updates = 0;
    std::int64_t k = 0;
    Recorder recorder(config, theta_ps);
    recorder.offer(0, theta, samples, updates);

    while (k < config.horizon) {
        for (int r = 0; r < config.br_per_iter; ++r) {
            kernel.advance(theta, agent_rng);
            ++updates;
        }
        for (int j = 0; j < learner_iters_per_round && k < config.horizon; ++j) {
            kernel.emit(theta, learner_rng, config.batch, batch);
            samples += static_cast<std::int64_t>(batch.size());

            std::fill(g.begin(), g.end(), 0.0);
            for (const Sample& z : batch) add_grad(loss, theta, z, g);
            const double scale = config.schedule.at(k + 1) / static_cast<double>(batch.size());
            for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= scale * g[i];
            ++k;

            if (!theta.all_finite() || norm(theta.span()) > kDivergenceNorm) {
                throw DivergenceError("run diverged at iteration " + std::to_string(k));
            }
            recorder.offer(k, theta, samples, updates);
        }
    }
    return recorder.finish(std::move(theta));
}

}  // namespace

void RunConfig::validate() const {
    if (theta0.size() == 0) throw std::invalid_argument("RunConfig: theta0 is empty");
    if (!theta0.all_finite()) throw std::invalid_argument("RunConfig: theta0 must be finite");
    if (horizon < 0) throw std::invalid_argument("RunConfig: horizon must be >= 0");
    if (batch < 1) throw std::invalid_argument("RunConfig: batch must be >= 1");
    if (br_per_iter < 1) throw std::invalid_argument("RunConfig: br_per_iter must be >= 1");
    if (learner_iters_per_agent_round < 1)
        throw std::invalid_argument("RunConfig: learner_iters_per_agent_round must be >= 1");
    if (br_per_iter > 1 && learner_iters_per_agent_round > 1)
        throw std::invalid_argument("RunConfig: br_per_iter and learner_iters_per_agent_round cannot both exceed 1");
    if (trials < 1) throw std::invalid_argument("RunConfig: trials must be >= 1");
    for (std::size_t i = 0; i < record_at.size(); ++i) {
        if (record_at[i] < 0 || record_at[i] > horizon)
            throw std::invalid_argument("RunConfig: record_at entry outside [0, horizon]");
        if (i > 0 && record_at[i] <= record_at[i - 1])
            throw std::invalid_argument("RunConfig: record_at must be strictly increasing");
    }
}

RunTrace sa_run(const LossModel& loss, Kernel& kernel, const RunConfig& config, const ParamVector& theta_ps) {
    return run_loop(loss, kernel, config, theta_ps, 1);
}

RunTrace lazy_run(const LossModel& loss, Kernel& kernel, const RunConfig& config, const ParamVector& theta_ps) {
    return run_loop(loss, kernel, config, theta_ps, config.learner_iters_per_agent_round);
}

ParamVector minimize_empirical_risk(const LossModel& loss, std::span<const Sample> dataset, ParamVector start,
                                    const MinimizeOptions& opts) {
    if (dataset.empty()) throw std::invalid_argument("minimize_empirical_risk: empty dataset");
    double lip = 0.0;
    for (const Sample& z : dataset) lip = std::max(lip, sample_lipschitz(loss, z));
    const double step = 1.0 / lip;

    ParamVector theta = std::move(start);
    for (std::int64_t it = 0; it < opts.max_iters; ++it) {
        const ParamVector g = mean_grad(loss, theta, dataset);
        if (norm(g.span()) <= opts.tol) return theta;
        for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= step * g[i];
        if (!theta.all_finite()) throw DivergenceError("minimize_empirical_risk: iterate became non-finite");
    }
    throw std::runtime_error("minimize_empirical_risk: no convergence within " + std::to_string(opts.max_iters) +
                             " iterations");
}

std::vector<ParamVector> rrm_run(const LossModel& loss, const DistributionOracle& distribution,
                                 const ParamVector& theta0, int outer_iters, double inner_tol) {
    if (outer_iters < 0) throw std::invalid_argument("rrm_run: outer_iters must be >= 0");
    std::vector<ParamVector> path{theta0};
    path.reserve(static_cast<std::size_t>(outer_iters) + 1);
    for (int t = 0; t < outer_iters; ++t) {
        const std::vector<Sample> data = distribution(path.back());
        path.push_back(minimize_empirical_risk(loss, data, path.back(), {inner_tol}));
    }
    return path;
}

ProbeResult one_step_contraction_probe(const LossModel& loss, Kernel& iid_kernel, const ProblemConstants& constants,
                                       const ParamVector& theta, const ParamVector& theta_ps, double gamma,
                                       std::int64_t n_mc, RngStream& rng) {
    if (n_mc < 2) throw std::invalid_argument("one_step_contraction_probe: n_mc must be >= 2");
    std::vector<Sample> buf;
    ParamVector next(theta.size());
    double mean = 0.0;
    double m2 = 0.0;
    for (std::int64_t n = 1; n <= n_mc; ++n) {
        iid_kernel.emit(theta, rng, 1, buf);
        const ParamVector g = grad(loss, theta, buf.front());
        for (std::size_t i = 0; i < theta.size(); ++i) next[i] = theta[i] - gamma * g[i];
        const double v = squared_distance(next.span(), theta_ps.span());
        const double delta = v - mean;
        mean += delta / static_cast<double>(n);
        m2 += delta * (v - mean);
    }
    const double var = m2 / static_cast<double>(n_mc - 1);

    const double e0 = squared_distance(theta.span(), theta_ps.span());
    const double L = constants.lipschitz();
    const double sigma = constants.sigma_noise();
    const double rhs =
        (1.0 - 2.0 * gamma * constants.mu_tilde() + 2.0 * L * L * gamma * gamma) * e0 + 2.0 * sigma * sigma * gamma * gamma;
    return {mean, rhs, std::sqrt(var / static_cast<double>(n_mc))};
}

}  // namespace perfsim
