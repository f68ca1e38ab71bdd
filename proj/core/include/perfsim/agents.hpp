#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <vector>

#include "perfsim/core.hpp"
#include "perfsim/losses.hpp"

namespace perfsim {

/// Scalar Gaussian environment D(theta) = N(z_bar + epsilon * theta, sigma^2)
/// with an AR(rho) agent on top of it.
struct GaussianEnv {
    double z_bar = 0.0;
    double epsilon = 0.0;  // in [0, 1)
    double sigma = 1.0;    // >= 0; sigma == 0 gives deterministic draws
    double rho = 1.0;      // in (0, 1]

    void validate() const;
    double mean_at(double theta) const { return z_bar + epsilon * theta; }
    // Variance of the AR stationary law at any fixed theta.
    double stationary_variance() const { return sigma * sigma * rho / (2.0 - rho); }
};

/// Scalar chain transition result: the chain state is the emitted sample.
struct KernelOutput {
    double next_state;
    Sample emitted;
};

/// Greedy-deploy draw z ~ D(theta). Memoryless, so next_state == emitted.
KernelOutput iid_step(const GaussianEnv& env, double theta, RngStream& rng);

/// z' = (1 - rho) z + rho (z_bar + epsilon theta + sigma xi), xi ~ N(0, 1).
/// With rho = 1 this consumes the same draws and returns bit-identical
/// values to iid_step.
KernelOutput ar_step(const GaussianEnv& env, double z, double theta, RngStream& rng);

enum class UtilityKind { quadratic, logistic };

/// Agent utility U(x'; (x_bar, y), theta), either
///   U_q  = <theta, x'> - |x' - x_bar|^2 / (2 eps), or
///   U_lg = y <theta, x'> - log(1 + exp(<theta, x'>)) - |x' - x_bar|^2 / (2 eps).
/// eps == 0 pins every response to x_bar.
struct Utility {
    UtilityKind kind = UtilityKind::quadratic;
    double epsilon = 0.0;
};

double utility_value(const Utility& u, std::span<const double> x, const Sample& base, const ParamVector& theta);
std::vector<double> utility_grad(const Utility& u, std::span<const double> x, const Sample& base,
                                 const ParamVector& theta);

class BestResponseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BestResponseOptions {
    double tol = 1e-8;
    int max_inner = 10000;
};

/// argmax_x' U(x'; base, theta). Closed form for U_q; gradient ascent with
/// step min(eps/2, 1/(1/eps + |theta|^2/4)) for U_lg until |grad U| <= tol. Throws BestResponseError when
/// the ascent has not converged after max_inner iterations.
std::vector<double> best_response_exact(const Utility& u, const Sample& base, const ParamVector& theta,
                                        const BestResponseOptions& opts = {});

/// m stateful agents. Each agent keeps its base sample (x_bar_i, y_i) and
/// current features x_i; labels and base data never change.
class AgentPool {
public:
    AgentPool(std::vector<Sample> base, Utility utility, double alpha, std::size_t participation);

    std::size_t size() const { return base_.size(); }
    std::size_t dim() const { return dim_; }
    const Utility& utility() const { return utility_; }
    double alpha() const { return alpha_; }
    std::size_t participation() const { return participation_; }

    const std::vector<Sample>& base() const { return base_; }
    std::span<const double> features(std::size_t i) const { return {features_.data() + i * dim_, dim_}; }
    const std::vector<double>& all_features() const { return features_; }
    Sample current_sample(std::size_t i) const;

    /// Agents touched by the most recent adapt() call.
    std::span<const std::size_t> last_selected() const { return selected_; }

    /// Step 1: b distinct uniformly chosen agents take one gradient-ascent
    /// step of size alpha on their utility. Throws DivergenceError when a
    /// feature becomes non-finite.
    void adapt(const ParamVector& theta, RngStream& rng);

    /// Step 2: one uniformly chosen agent presents its current sample.
    Sample present(RngStream& rng) const;

    /// `count` distinct uniformly chosen agents present their samples.
    void present_batch(RngStream& rng, std::size_t count, std::vector<Sample>& out);

    /// Resets every agent to its base features.
    void reset();

private:
    void choose_distinct(RngStream& rng, std::size_t count);

    std::vector<Sample> base_;
    Utility utility_;
    double alpha_;
    std::size_t participation_;
    std::size_t dim_;
    std::vector<double> features_;  // m x d, row-major
    std::vector<std::size_t> order_;
    std::vector<std::size_t> selected_;
};

/// One transition of the adapted best-response chain: adapt() then
/// present(), with the emitted sample taken after the update. The pool is
/// updated in place.
Sample pool_step(AgentPool& pool, const ParamVector& theta, RngStream& rng);

/// Greedy-deploy draw from the pool's exact best-response distribution:
/// a uniformly chosen agent replies with best_response_exact of its base
/// sample. The pool state is not read or modified.
Sample iid_step(const AgentPool& pool, const ParamVector& theta, RngStream& rng,
                const BestResponseOptions& opts = {});

/// Exact best-response dataset D(theta): one reply per base sample.
std::vector<Sample> best_response_dataset(std::span<const Sample> base, const Utility& u, const ParamVector& theta,
                                          const BestResponseOptions& opts = {});

/// Controlled Markov kernel seen by the learner. advance() is the agents'
/// state transition under the deployed theta; emit() hands samples to the
/// learner without touching agent state.
class Kernel {
public:
    virtual ~Kernel() = default;

    virtual void advance(const ParamVector& theta, RngStream& rng) = 0;
    virtual void emit(const ParamVector& theta, RngStream& rng, std::size_t count, std::vector<Sample>& out) = 0;
};

class GaussianIidKernel final : public Kernel {
public:
    explicit GaussianIidKernel(GaussianEnv env);
    void advance(const ParamVector&, RngStream&) override {}
    void emit(const ParamVector& theta, RngStream& rng, std::size_t count, std::vector<Sample>& out) override;

private:
    GaussianEnv env_;
};

/// AR(rho) agent. The chain state is the sample itself, so emit() only
/// supports count == 1.
class GaussianArKernel final : public Kernel {
public:
    GaussianArKernel(GaussianEnv env, double z0);
    void advance(const ParamVector& theta, RngStream& rng) override;
    void emit(const ParamVector& theta, RngStream& rng, std::size_t count, std::vector<Sample>& out) override;
    double state() const { return z_; }

private:
    GaussianEnv env_;
    double z_;
};

class AdaptedPoolKernel final : public Kernel {
public:
    explicit AdaptedPoolKernel(AgentPool pool) : pool_(std::move(pool)) {}
    void advance(const ParamVector& theta, RngStream& rng) override { pool_.adapt(theta, rng); }
    void emit(const ParamVector& theta, RngStream& rng, std::size_t count, std::vector<Sample>& out) override;
    const AgentPool& pool() const { return pool_; }

private:
    AgentPool pool_;
};

/// Greedy deploy on the pool: agents reply with exact best responses.
class ExactResponseKernel final : public Kernel {
public:
    ExactResponseKernel(std::vector<Sample> base, Utility utility, BestResponseOptions opts = {});
    void advance(const ParamVector&, RngStream&) override {}
    void emit(const ParamVector& theta, RngStream& rng, std::size_t count, std::vector<Sample>& out) override;

private:
    std::vector<Sample> base_;
    Utility utility_;
    BestResponseOptions opts_;
    std::vector<std::size_t> order_;
};

}  // namespace perfsim
