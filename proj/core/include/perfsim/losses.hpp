#pragma once

#include <optional>
#include <span>
#include <vector>

#include "perfsim/core.hpp"

namespace perfsim {

/// One data point. Classification samples carry features and a {0,1}
/// label; the scalar Gaussian problem only uses `value`.
struct Sample {
    std::vector<double> features;
    std::optional<int> label;
    double value = 0.0;

    static Sample scalar(double z) { return Sample{{}, std::nullopt, z}; }
    static Sample labeled(std::vector<double> x, int y);

    friend bool operator==(const Sample&, const Sample&) = default;
};

// log(1 + exp(u)) without overflow.
double log1pexp(double u);
double sigmoid(double u);

class LossModel {
public:
    enum class Kind { quadratic, reg_logistic };

    /// (z - theta)^2 / 2 on a scalar sample, d = 1. mu = L = 1.
    static LossModel quadratic();
    /// (beta/2)|theta|^2 + log(1 + exp(<theta, x>)) - y <theta, x>.
    /// mu = beta; the global gradient Lipschitz constant is supplied by the
    /// caller (see estimate_logistic_constants).
    static LossModel reg_logistic(double beta, double lipschitz);

    Kind kind() const { return kind_; }
    double beta() const { return beta_; }
    double mu() const { return kind_ == Kind::quadratic ? 1.0 : beta_; }
    double lipschitz() const { return lipschitz_; }

private:
    LossModel(Kind kind, double beta, double lipschitz) : kind_(kind), beta_(beta), lipschitz_(lipschitz) {}

    Kind kind_;
    double beta_;
    double lipschitz_;
};

double loss(const LossModel& model, const ParamVector& theta, const Sample& z);
ParamVector grad(const LossModel& model, const ParamVector& theta, const Sample& z);

/// Accumulates grad(model, theta, z) into `out` (no allocation).
void add_grad(const LossModel& model, const ParamVector& theta, const Sample& z, ParamVector& out);

/// Mean gradient over an empirical distribution. Throws on an empty dataset.
ParamVector mean_grad(const LossModel& model, const ParamVector& theta1, std::span<const Sample> dataset);
double mean_loss(const LossModel& model, const ParamVector& theta, std::span<const Sample> dataset);

/// Per-sample gradient Lipschitz bound in theta: 1 (quadratic) or
/// beta + |x|^2 / 4 (logistic).
double sample_lipschitz(const LossModel& model, const Sample& z);

struct LogisticEstimates {
    double lipschitz;  // sqrt(2 beta m + |X|_F^2 / 2)
    double mu_tilde;   // (1 - eps) beta - eps |X|_F^2 / (4 m)
};

/// Global constants of the regularized logistic problem, estimated from the
/// feature matrix of the m base samples.
LogisticEstimates estimate_logistic_constants(std::span<const Sample> dataset, double beta, double epsilon);

}  // namespace perfsim
