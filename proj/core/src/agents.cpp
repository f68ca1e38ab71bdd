#include "perfsim/agents.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <utility>

namespace perfsim {

void GaussianEnv::validate() const {
    if (!std::isfinite(z_bar)) throw std::invalid_argument("GaussianEnv: z_bar must be finite");
    if (!(epsilon >= 0.0 && epsilon < 1.0)) throw std::invalid_argument("GaussianEnv: epsilon must lie in [0, 1)");
    if (!(std::isfinite(sigma) && sigma >= 0.0)) throw std::invalid_argument("GaussianEnv: sigma must be >= 0");
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("GaussianEnv: rho must lie in (0, 1]");
}

KernelOutput iid_step(const GaussianEnv& env, double theta, RngStream& rng) {
    const double z = env.mean_at(theta) + env.sigma * rng.normal();
    return {z, Sample::scalar(z)};
}

KernelOutput ar_step(const GaussianEnv& env, double z, double theta, RngStream& rng) {
    const double fresh = env.mean_at(theta) + env.sigma * rng.normal();
    const double next = (1.0 - env.rho) * z + env.rho * fresh;
    return {next, Sample::scalar(next)};
}

namespace {

void check_utility_args(std::span<const double> x, const Sample& base, const ParamVector& theta) {
    if (x.size() != base.features.size() || theta.size() != x.size())
        throw std::invalid_argument("utility: dimension mismatch");
}

}  // namespace

double utility_value(const Utility& u, std::span<const double> x, const Sample& base, const ParamVector& theta) {
    check_utility_args(x, base, theta);
    const double inner = dot(theta.span(), x);
    const double dist2 = squared_distance(x, base.features);
    double value = u.kind == UtilityKind::quadratic
                       ? inner
                       : static_cast<double>(base.label.value_or(0)) * inner - log1pexp(inner);
    if (u.epsilon > 0.0) {
        value -= dist2 / (2.0 * u.epsilon);
    } else if (dist2 > 0.0) {
        value = -std::numeric_limits<double>::infinity();
    }
    return value;
}

std::vector<double> utility_grad(const Utility& u, std::span<const double> x, const Sample& base,
                                 const ParamVector& theta) {
    check_utility_args(x, base, theta);
    if (!(u.epsilon > 0.0)) throw std::invalid_argument("utility_grad: epsilon must be > 0");
    const double weight = u.kind == UtilityKind::quadratic
                              ? 1.0
                              : static_cast<double>(base.label.value_or(0)) - sigmoid(dot(theta.span(), x));
    std::vector<double> g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        g[i] = weight * theta[i] - (x[i] - base.features[i]) / u.epsilon;
    }
    return g;
}

std::vector<double> best_response_exact(const Utility& u, const Sample& base, const ParamVector& theta,
                                        const BestResponseOptions& opts) {
    if (theta.size() != base.features.size()) throw std::invalid_argument("best_response_exact: dimension mismatch");
    std::vector<double> x = base.features;
    if (u.epsilon == 0.0) return x;
    if (u.kind == UtilityKind::quadratic) {
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += u.epsilon * theta[i];
        return x;
    }
    // U_lg is (1/eps)-strongly concave with (1/eps + |theta|^2/4)-Lipschitz
    // gradient. eps/2 is used unless that would overshoot for large |theta|.
    const double step = std::min(u.epsilon / 2.0, 1.0 / (1.0 / u.epsilon + squared_norm(theta.span()) / 4.0));
    for (int it = 0; it < opts.max_inner; ++it) {
        const std::vector<double> g = utility_grad(u, x, base, theta);
        if (norm(g) <= opts.tol) return x;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += step * g[i];
    }
    if (norm(utility_grad(u, x, base, theta)) <= opts.tol) return x;
    throw BestResponseError("best_response_exact: no convergence within " + std::to_string(opts.max_inner) +
                            " iterations");
}

std::vector<Sample> best_response_dataset(std::span<const Sample> base, const Utility& u, const ParamVector& theta,
                                          const BestResponseOptions& opts) {
    std::vector<Sample> out;
    out.reserve(base.size());
    for (const Sample& s : base) {
        out.push_back(Sample{best_response_exact(u, s, theta, opts), s.label, 0.0});
    }
    return out;
}

AgentPool::AgentPool(std::vector<Sample> base, Utility utility, double alpha, std::size_t participation)
    : base_(std::move(base)), utility_(utility), alpha_(alpha), participation_(participation) {
    if (base_.empty()) throw std::invalid_argument("AgentPool: no agents");
    if (!(std::isfinite(alpha) && alpha > 0.0)) throw std::invalid_argument("AgentPool: alpha must be > 0");
    if (!(utility.epsilon >= 0.0)) throw std::invalid_argument("AgentPool: epsilon must be >= 0");
    if (participation_ < 1 || participation_ > base_.size())
        throw std::invalid_argument("AgentPool: participation must lie in [1, m]");
    dim_ = base_.front().features.size();
    if (dim_ == 0) throw std::invalid_argument("AgentPool: empty feature vectors");
    for (const Sample& s : base_) {
        if (s.features.size() != dim_) throw std::invalid_argument("AgentPool: ragged feature vectors");
        if (!s.label) throw std::invalid_argument("AgentPool: base samples need labels");
    }
    order_.resize(base_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    reset();
}

void AgentPool::reset() {
    features_.clear();
    features_.reserve(base_.size() * dim_);
    for (const Sample& s : base_) features_.insert(features_.end(), s.features.begin(), s.features.end());
}

Sample AgentPool::current_sample(std::size_t i) const {
    const auto x = features(i);
    return Sample{std::vector<double>(x.begin(), x.end()), base_[i].label, 0.0};
}

void AgentPool::choose_distinct(RngStream& rng, std::size_t count) {
    // Partial Fisher-Yates over a persistent permutation: any starting order
    // yields a uniformly distributed subset.
    const std::size_t m = order_.size();
    selected_.resize(count);
    for (std::size_t j = 0; j < count; ++j) {
        const std::size_t r = j + rng.uniform_index(m - j);
        std::swap(order_[j], order_[r]);
        selected_[j] = order_[j];
    }
}

void AgentPool::adapt(const ParamVector& theta, RngStream& rng) {
    if (theta.size() != dim_) throw std::invalid_argument("AgentPool::adapt: dimension mismatch");
    choose_distinct(rng, participation_);
    for (std::size_t i : selected_) {
        double* x = features_.data() + i * dim_;
        if (utility_.epsilon == 0.0) {
            std::copy(base_[i].features.begin(), base_[i].features.end(), x);
            continue;
        }
        const std::vector<double> g = utility_grad(utility_, {x, dim_}, base_[i], theta);
        for (std::size_t c = 0; c < dim_; ++c) {
            x[c] += alpha_ * g[c];
            if (!std::isfinite(x[c])) {
                throw DivergenceError("AgentPool::adapt: non-finite feature for agent " + std::to_string(i));
            }
        }
    }
}

Sample AgentPool::present(RngStream& rng) const { return current_sample(rng.uniform_index(base_.size())); }

void AgentPool::present_batch(RngStream& rng, std::size_t count, std::vector<Sample>& out) {
    out.clear();
    if (count == 1) {
        out.push_back(present(rng));
        return;
    }
    if (count > base_.size()) throw std::invalid_argument("AgentPool::present_batch: batch exceeds pool size");
    const std::vector<std::size_t> keep = selected_;
    choose_distinct(rng, count);
    for (std::size_t i : selected_) out.push_back(current_sample(i));
    selected_ = keep;
}

Sample pool_step(AgentPool& pool, const ParamVector& theta, RngStream& rng) {
    pool.adapt(theta, rng);
    return pool.present(rng);
}

Sample iid_step(const AgentPool& pool, const ParamVector& theta, RngStream& rng, const BestResponseOptions& opts) {
    const Sample& base = pool.base()[rng.uniform_index(pool.size())];
    return Sample{best_response_exact(pool.utility(), base, theta, opts), base.label, 0.0};
}

GaussianIidKernel::GaussianIidKernel(GaussianEnv env) : env_(env) { env_.validate(); }

void GaussianIidKernel::emit(const ParamVector& theta, RngStream& rng, std::size_t count, std::vector<Sample>& out) {
    if (theta.size() != 1) throw std::invalid_argument("GaussianIidKernel: theta must have dimension 1");
    out.clear();
    for (std::size_t j = 0; j < count; ++j) out.push_back(iid_step(env_, theta[0], rng).emitted);
}

GaussianArKernel::GaussianArKernel(GaussianEnv env, double z0) : env_(env), z_(z0) {
    env_.validate();
    if (!std::isfinite(z0)) throw std::invalid_argument("GaussianArKernel: initial state must be finite");
}

void GaussianArKernel::advance(const ParamVector& theta, RngStream& rng) {
    if (theta.size() != 1) throw std::invalid_argument("GaussianArKernel: theta must have dimension 1");
    z_ = ar_step(env_, z_, theta[0], rng).next_state;
}

void GaussianArKernel::emit(const ParamVector&, RngStream&, std::size_t count, std::vector<Sample>& out) {
    if (count != 1) throw std::invalid_argument("GaussianArKernel: the AR state is a single sample; batch must be 1");
    out.clear();
    out.push_back(Sample::scalar(z_));
}

void AdaptedPoolKernel::emit(const ParamVector&, RngStream& rng, std::size_t count, std::vector<Sample>& out) {
    pool_.present_batch(rng, count, out);
}

ExactResponseKernel::ExactResponseKernel(std::vector<Sample> base, Utility utility, BestResponseOptions opts)
    : base_(std::move(base)), utility_(utility), opts_(opts) {
    if (base_.empty()) throw std::invalid_argument("ExactResponseKernel: no agents");
    order_.resize(base_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
}

void ExactResponseKernel::emit(const ParamVector& theta, RngStream& rng, std::size_t count, std::vector<Sample>& out) {
    if (count > base_.size()) throw std::invalid_argument("ExactResponseKernel: batch exceeds pool size");
    out.clear();
    const std::size_t m = base_.size();
    for (std::size_t j = 0; j < count; ++j) {
        std::size_t idx;
        if (count == 1) {
            idx = rng.uniform_index(m);
        } else {
            const std::size_t r = j + rng.uniform_index(m - j);
            std::swap(order_[j], order_[r]);
            idx = order_[j];
        }
        const Sample& b = base_[idx];
        out.push_back(Sample{best_response_exact(utility_, b, theta, opts_), b.label, 0.0});
    }
}

}  // namespace perfsim
