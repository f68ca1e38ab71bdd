#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "perfsim/agents.hpp"
#include "perfsim/solver.hpp"

namespace perfsim {

/// z_bar / (1 - epsilon). Throws std::invalid_argument for epsilon >= 1.
double theta_ps_gaussian(const GaussianEnv& env);

/// D(theta) for the Gaussian environment as a two-point set {mean - sigma,
/// mean + sigma}, which matches its mean and variance exactly.
DistributionOracle gaussian_distribution(const GaussianEnv& env);

/// D(theta) for a pool of agents: every base sample replaced by its exact
/// best response to theta.
DistributionOracle pool_distribution(std::vector<Sample> base, Utility utility, BestResponseOptions opts = {});

class NonContractionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct FixedPointOptions {
    double outer_tol = 1e-10;
    double inner_tol = 1e-10;
    int max_outer = 10000;
    int increasing_steps_limit = 5;
};

struct FixedPointResult {
    ParamVector theta;
    int outer_iterations;
    double residual;  // |mean_grad(theta, D(theta))|
};

/// Runs repeated risk minimization until |theta_{t+1} - theta_t| <=
/// outer_tol and reports the self-consistency residual of the result.
/// Throws NonContractionError when the step length grows for
/// `increasing_steps_limit` consecutive outer iterations, std::runtime_error
/// when max_outer is exhausted.
FixedPointResult theta_ps_fixed_point(const LossModel& loss, const DistributionOracle& distribution,
                                      const ParamVector& theta0, const FixedPointOptions& opts = {});

struct RateFit {
    double slope;
    double intercept;
    double r2;
    std::int64_t k_lo;
    std::int64_t k_hi;
    std::size_t points;
};

/// Least-squares fit of log(error) against log(k) over k in [k_lo, k_hi].
/// `ks` and `mean_errors` are parallel series of trial-averaged errors.
/// Throws std::invalid_argument for a bad window, fewer than two points, or
/// a non-positive error inside the window.
RateFit fit_rate(std::span<const std::int64_t> ks, std::span<const double> mean_errors, std::int64_t k_lo,
                 std::int64_t k_hi);

}  // namespace perfsim
