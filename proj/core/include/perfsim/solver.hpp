#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "perfsim/agents.hpp"
#include "perfsim/core.hpp"
#include "perfsim/losses.hpp"

namespace perfsim {

struct RunConfig {
    ParamVector theta0;
    StepSchedule schedule = StepSchedule::constant(0.0);
    std::int64_t horizon = 1;                    // learner iterations K
    std::size_t batch = 1;                       // samples averaged per learner step
    int br_per_iter = 1;                         // agent rounds per deployment
    int learner_iters_per_agent_round = 1;       // lazy-deploy learner steps per agent round
    int trials = 1;
    std::uint64_t seed = 0;
    // Iterations to record (sorted, within [0, horizon]); empty records every k.
    std::vector<std::int64_t> record_at;

    void validate() const;
};

struct TraceRecord {
    std::int64_t k;
    double error;                // |theta_k - theta_ps|^2
    std::int64_t samples_drawn;  // cumulative samples consumed by the learner
    std::int64_t agent_updates;  // cumulative agent adaptation rounds
};

struct RunTrace {
    std::vector<TraceRecord> records;
    ParamVector final_theta;
};

/// State-dependent stochastic approximation. Per iteration k = 0..K-1 the
/// kernel advances br_per_iter times under theta_k, `batch` samples are
/// emitted, and theta_{k+1} = theta_k - gamma_{k+1} * (mean gradient).
/// The agent and learner draws use sub-streams agents/learner of
/// config.seed. Throws DivergenceError when theta leaves the finite range or
/// |theta| exceeds 1e12.
RunTrace sa_run(const LossModel& loss, Kernel& kernel, const RunConfig& config, const ParamVector& theta_ps);

/// Lazy deploy: per agent round the kernel advances br_per_iter times, then
/// the learner takes learner_iters_per_agent_round updates, each on fresh
/// samples emitted from the frozen agent state. k counts learner updates.
RunTrace lazy_run(const LossModel& loss, Kernel& kernel, const RunConfig& config, const ParamVector& theta_ps);

/// Materializes the dataset D(theta) induced by a deployed model.
using DistributionOracle = std::function<std::vector<Sample>(const ParamVector&)>;

struct MinimizeOptions {
    double tol = 1e-10;
    std::int64_t max_iters = 1'000'000;
};

/// argmin_theta mean loss over `dataset` by full-batch gradient descent with
/// step 1/L (L = largest per-sample gradient Lipschitz bound), stopping at
/// |grad| <= tol. Throws std::runtime_error on non-convergence.
ParamVector minimize_empirical_risk(const LossModel& loss, std::span<const Sample> dataset, ParamVector start,
                                    const MinimizeOptions& opts = {});

/// Repeated risk minimization: theta_{t+1} = argmin mean loss over
/// D(theta_t). Returns the path theta_0..theta_outer_iters.
std::vector<ParamVector> rrm_run(const LossModel& loss, const DistributionOracle& distribution,
                                 const ParamVector& theta0, int outer_iters, double inner_tol = 1e-10);

struct ProbeResult {
    double lhs;     // Monte Carlo mean of |theta+ - theta_ps|^2
    double rhs;     // (1 - 2 g mu~ + 2 L^2 g^2)|theta - theta_ps|^2 + 2 sigma^2 g^2
    double std_error;  // standard error of lhs
};

/// One learner step from theta with step gamma, repeated over n_mc fresh
/// samples from an i.i.d. kernel, compared with the one-step contraction
/// bound built from `constants`.
ProbeResult one_step_contraction_probe(const LossModel& loss, Kernel& iid_kernel, const ProblemConstants& constants,
                                       const ParamVector& theta, const ParamVector& theta_ps, double gamma,
                                       std::int64_t n_mc, RngStream& rng);

}  // namespace perfsim
