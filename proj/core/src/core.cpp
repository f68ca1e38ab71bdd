#include "perfsim/core.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace perfsim {

bool ParamVector::all_finite() const {
    for (double v : values_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

ParamVector& ParamVector::operator+=(const ParamVector& other) {
    if (other.size() != size()) throw std::invalid_argument("ParamVector: dimension mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
    return *this;
}

ParamVector& ParamVector::operator-=(const ParamVector& other) {
    if (other.size() != size()) throw std::invalid_argument("ParamVector: dimension mismatch");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] -= other.values_[i];
    return *this;
}

ParamVector& ParamVector::operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
}

ParamVector operator+(ParamVector a, const ParamVector& b) { return a += b; }
ParamVector operator-(ParamVector a, const ParamVector& b) { return a -= b; }
ParamVector operator*(double s, ParamVector a) { return a *= s; }

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("dot: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw std::invalid_argument("squared_distance: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

ProblemConstants::ProblemConstants(double mu, double lipschitz, double sensitivity, double sigma_noise)
    : mu_(mu), lipschitz_(lipschitz), sensitivity_(sensitivity), sigma_noise_(sigma_noise) {
    if (!(std::isfinite(mu) && mu > 0.0)) throw std::invalid_argument("ProblemConstants: mu must be > 0");
    if (!(std::isfinite(lipschitz) && lipschitz >= 0.0))
        throw std::invalid_argument("ProblemConstants: lipschitz must be >= 0");
    if (!(std::isfinite(sensitivity) && sensitivity >= 0.0))
        throw std::invalid_argument("ProblemConstants: sensitivity must be >= 0");
    if (!(std::isfinite(sigma_noise) && sigma_noise >= 0.0))
        throw std::invalid_argument("ProblemConstants: sigma_noise must be >= 0");
}

StepSchedule StepSchedule::constant(double gamma) {
    if (!(std::isfinite(gamma) && gamma >= 0.0))
        throw std::invalid_argument("StepSchedule: constant step must be finite and >= 0");
    return {Kind::constant, gamma, 0.0};
}

StepSchedule StepSchedule::inverse(double c0, double c1) {
    if (!(std::isfinite(c0) && c0 >= 0.0)) throw std::invalid_argument("StepSchedule: c0 must be >= 0");
    if (!(std::isfinite(c1) && c1 >= 0.0)) throw std::invalid_argument("StepSchedule: c1 must be >= 0");
    return {Kind::inverse, c0, c1};
}

double StepSchedule::at(std::int64_t k) const {
    if (k < 1) throw std::invalid_argument("StepSchedule: k must be >= 1");
    switch (kind_) {
        case Kind::constant:
            return c0_;
        case Kind::inverse:
            return c0_ / (c1_ + static_cast<double>(k));
    }
    return 0.0;
}

ScheduleReport check_schedule(const StepSchedule& schedule, const ProblemConstants& constants,
                              std::int64_t horizon, double gamma_cap) {
    if (horizon < 2) throw std::invalid_argument("check_schedule: horizon must be >= 2");
    if (!(gamma_cap > 0.0)) throw std::invalid_argument("check_schedule: gamma_cap must be > 0");
    if (schedule.is_null()) throw std::invalid_argument("check_schedule: schedule is identically zero");

    const double mu_tilde = constants.mu_tilde();
    ScheduleReport report;
    report.checks.reserve(static_cast<std::size_t>(horizon));

    double prev = 0.0;
    for (std::int64_t k = 1; k <= horizon; ++k) {
        const double gamma = schedule.at(k);
        if (k > 1 && gamma > prev) {
            throw std::invalid_argument("check_schedule: schedule increases at k = " + std::to_string(k));
        }
        ScheduleCheck c{k, gamma, 1.0, true, gamma <= gamma_cap};
        if (k > 1) {
            c.ratio = prev / gamma;
            c.ratio_ok = c.ratio <= 1.0 + gamma * mu_tilde / 4.0;
        }
        if (!c.ratio_ok && !report.first_ratio_violation) report.first_ratio_violation = k;
        if (!c.cap_ok && !report.first_cap_violation) report.first_cap_violation = k;
        report.checks.push_back(c);
        prev = gamma;
    }
    return report;
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu), static_cast<std::uint32_t>(seed >> 32)};
    engine_.seed(seq);
}

RngStream RngStream::derive(std::uint64_t stream_index) const {
    // splitmix64 finalizer over (seed, index) gives well-separated child seeds.
    std::uint64_t z = seed_ + 0x9e3779b97f4a7c15ULL * (stream_index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    return RngStream(z);
}

double RngStream::uniform() { return std::generate_canonical<double, 53>(engine_); }

double RngStream::normal() { return normal_(engine_); }

std::size_t RngStream::uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("RngStream::uniform_index: empty range");
    std::uniform_int_distribution<std::size_t> dist(0, n - 1);
    return dist(engine_);
}

}  // namespace perfsim
