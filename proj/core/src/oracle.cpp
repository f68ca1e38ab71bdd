#include "perfsim/oracle.hpp"

#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace perfsim {

double theta_ps_gaussian(const GaussianEnv& env) {
    if (!(env.epsilon < 1.0)) throw std::invalid_argument("theta_ps_gaussian: epsilon must be < 1");
    return env.z_bar / (1.0 - env.epsilon);
}

DistributionOracle gaussian_distribution(const GaussianEnv& env) {
    env.validate();
    return [env](const ParamVector& theta) {
        if (theta.size() != 1) throw std::invalid_argument("gaussian_distribution: theta must have dimension 1");
        const double mean = env.mean_at(theta[0]);
        return std::vector<Sample>{Sample::scalar(mean - env.sigma), Sample::scalar(mean + env.sigma)};
    };
}

DistributionOracle pool_distribution(std::vector<Sample> base, Utility utility, BestResponseOptions opts) {
    if (base.empty()) throw std::invalid_argument("pool_distribution: no agents");
    return [base = std::move(base), utility, opts](const ParamVector& theta) {
        return best_response_dataset(base, utility, theta, opts);
    };
}

FixedPointResult theta_ps_fixed_point(const LossModel& loss, const DistributionOracle& distribution,
                                      const ParamVector& theta0, const FixedPointOptions& opts) {
    ParamVector theta = theta0;
    double prev_step = std::numeric_limits<double>::infinity();
    int increasing = 0;
    for (int t = 1; t <= opts.max_outer; ++t) {
        const std::vector<Sample> data = distribution(theta);
        ParamVector next = minimize_empirical_risk(loss, data, theta, {opts.inner_tol});
        const double step = std::sqrt(squared_distance(next.span(), theta.span()));
        theta = std::move(next);

        if (step <= opts.outer_tol) {
            const std::vector<Sample> self = distribution(theta);
            return {theta, t, norm(mean_grad(loss, theta, self).span())};
        }
        increasing = step > prev_step ? increasing + 1 : 0;
        if (increasing >= opts.increasing_steps_limit) {
            throw NonContractionError("theta_ps_fixed_point: step length grew for " + std::to_string(increasing) +
                                      " consecutive outer iterations");
        }
        prev_step = step;
    }
    throw std::runtime_error("theta_ps_fixed_point: no convergence within " + std::to_string(opts.max_outer) +
                             " outer iterations");
}

RateFit fit_rate(std::span<const std::int64_t> ks, std::span<const double> mean_errors, std::int64_t k_lo,
                 std::int64_t k_hi) {
    if (ks.size() != mean_errors.size()) throw std::invalid_argument("fit_rate: series length mismatch");
    if (k_lo < 1 || k_hi <= k_lo) throw std::invalid_argument("fit_rate: window needs 1 <= k_lo < k_hi");

    std::vector<double> xs;
    std::vector<double> ys;
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] < k_lo || ks[i] > k_hi) continue;
        if (!(mean_errors[i] > 0.0)) {
            throw std::invalid_argument("fit_rate: non-positive error at k = " + std::to_string(ks[i]));
        }
        xs.push_back(std::log(static_cast<double>(ks[i])));
        ys.push_back(std::log(mean_errors[i]));
    }
    if (xs.size() < 2) throw std::invalid_argument("fit_rate: fewer than two points in window");

    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    const double slope = sxy / sxx;
    const double intercept = my - slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double r = ys[i] - (intercept + slope * xs[i]);
        ss_res += r * r;
    }
    // A constant series is fitted exactly by the zero-slope line.
    const double r2 = syy > 0.0 ? 1.0 - ss_res / syy : 1.0;
    return {slope, intercept, r2, k_lo, k_hi, xs.size()};
}

}  // namespace perfsim
