#include "perfsim/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace perfsim {

namespace {

void check_quadratic(const ParamVector& theta) {
    if (theta.size() != 1) throw std::invalid_argument("quadratic loss: theta must have dimension 1");
}

void check_logistic(const ParamVector& theta, const Sample& z) {
    if (theta.size() != z.features.size())
        throw std::invalid_argument("logistic loss: theta/feature dimension mismatch");
    if (!z.label) throw std::invalid_argument("logistic loss: sample has no label");
}

}  // namespace

Sample Sample::labeled(std::vector<double> x, int y) {
    if (y != 0 && y != 1) throw std::invalid_argument("Sample: label must be 0 or 1");
    return Sample{std::move(x), y, 0.0};
}

double log1pexp(double u) { return std::max(u, 0.0) + std::log1p(std::exp(-std::abs(u))); }

double sigmoid(double u) {
    if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
    const double e = std::exp(u);
    return e / (1.0 + e);
}

LossModel LossModel::quadratic() { return {Kind::quadratic, 0.0, 1.0}; }

LossModel LossModel::reg_logistic(double beta, double lipschitz) {
    if (!(std::isfinite(beta) && beta >= 0.0)) throw std::invalid_argument("reg_logistic: beta must be >= 0");
    if (!(std::isfinite(lipschitz) && lipschitz >= 0.0))
        throw std::invalid_argument("reg_logistic: lipschitz must be >= 0");
    return {Kind::reg_logistic, beta, lipschitz};
}

double loss(const LossModel& model, const ParamVector& theta, const Sample& z) {
    if (model.kind() == LossModel::Kind::quadratic) {
        check_quadratic(theta);
        const double r = z.value - theta[0];
        return 0.5 * r * r;
    }
    check_logistic(theta, z);
    const double u = dot(theta.span(), z.features);
    return 0.5 * model.beta() * squared_norm(theta.span()) + log1pexp(u) - static_cast<double>(*z.label) * u;
}

void add_grad(const LossModel& model, const ParamVector& theta, const Sample& z, ParamVector& out) {
    if (out.size() != theta.size()) throw std::invalid_argument("add_grad: output dimension mismatch");
    if (model.kind() == LossModel::Kind::quadratic) {
        check_quadratic(theta);
        out[0] += theta[0] - z.value;
        return;
    }
    check_logistic(theta, z);
    const double residual = sigmoid(dot(theta.span(), z.features)) - static_cast<double>(*z.label);
    for (std::size_t i = 0; i < theta.size(); ++i) {
        out[i] += model.beta() * theta[i] + residual * z.features[i];
    }
}

ParamVector grad(const LossModel& model, const ParamVector& theta, const Sample& z) {
    ParamVector g(theta.size());
    add_grad(model, theta, z, g);
    return g;
}

ParamVector mean_grad(const LossModel& model, const ParamVector& theta1, std::span<const Sample> dataset) {
    if (dataset.empty()) throw std::invalid_argument("mean_grad: empty dataset");
    ParamVector g(theta1.size());
    for (const Sample& z : dataset) add_grad(model, theta1, z, g);
    g *= 1.0 / static_cast<double>(dataset.size());
    return g;
}

double mean_loss(const LossModel& model, const ParamVector& theta, std::span<const Sample> dataset) {
    if (dataset.empty()) throw std::invalid_argument("mean_loss: empty dataset");
    double acc = 0.0;
    for (const Sample& z : dataset) acc += loss(model, theta, z);
    return acc / static_cast<double>(dataset.size());
}

double sample_lipschitz(const LossModel& model, const Sample& z) {
    if (model.kind() == LossModel::Kind::quadratic) return 1.0;
    return model.beta() + squared_norm(z.features) / 4.0;
}

LogisticEstimates estimate_logistic_constants(std::span<const Sample> dataset, double beta, double epsilon) {
    if (dataset.empty()) throw std::invalid_argument("estimate_logistic_constants: empty dataset");
    const double m = static_cast<double>(dataset.size());
    double frob2 = 0.0;
    for (const Sample& z : dataset) frob2 += squared_norm(z.features);
    return {std::sqrt(2.0 * beta * m + frob2 / 2.0), (1.0 - epsilon) * beta - epsilon * frob2 / (4.0 * m)};
}

}  // namespace perfsim
