#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace perfsim {

/// Raised when an iterate or agent state leaves the finite range.
class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Learner state: a dense real vector of fixed length d.
class ParamVector {
public:
    ParamVector() = default;
    explicit ParamVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
    ParamVector(std::initializer_list<double> values) : values_(values) {}
    explicit ParamVector(std::vector<double> values) : values_(std::move(values)) {}

    std::size_t size() const { return values_.size(); }
    double& operator[](std::size_t i) { return values_[i]; }
    double operator[](std::size_t i) const { return values_[i]; }

    std::span<double> span() { return values_; }
    std::span<const double> span() const { return values_; }
    const std::vector<double>& values() const { return values_; }

    auto begin() { return values_.begin(); }
    auto end() { return values_.end(); }
    auto begin() const { return values_.begin(); }
    auto end() const { return values_.end(); }

    bool all_finite() const;

    ParamVector& operator+=(const ParamVector& other);
    ParamVector& operator-=(const ParamVector& other);
    ParamVector& operator*=(double s);

    friend bool operator==(const ParamVector&, const ParamVector&) = default;

private:
    std::vector<double> values_;
};

ParamVector operator+(ParamVector a, const ParamVector& b);
ParamVector operator-(ParamVector a, const ParamVector& b);
ParamVector operator*(double s, ParamVector a);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);
double squared_distance(std::span<const double> a, std::span<const double> b);

/// Strong convexity, gradient Lipschitz, distribution sensitivity and noise
/// level of a problem instance. mu_tilde = mu - lipschitz * sensitivity is
/// always derived, never stored independently.
class ProblemConstants {
public:
    ProblemConstants(double mu, double lipschitz, double sensitivity, double sigma_noise);

    double mu() const { return mu_; }
    double lipschitz() const { return lipschitz_; }
    double sensitivity() const { return sensitivity_; }
    double sigma_noise() const { return sigma_noise_; }
    double mu_tilde() const { return mu_ - lipschitz_ * sensitivity_; }

    // True when sensitivity < mu / lipschitz, i.e. the rate-guaranteed regime.
    bool contractive() const { return mu_tilde() > 0.0; }

private:
    double mu_;
    double lipschitz_;
    double sensitivity_;
    double sigma_noise_;
};

class StepSchedule {
public:
    enum class Kind { constant, inverse };

    /// gamma_k = gamma. gamma == 0 is accepted and yields an identity run.
    static StepSchedule constant(double gamma);
    /// gamma_k = c0 / (c1 + k).
    static StepSchedule inverse(double c0, double c1);

    double at(std::int64_t k) const;

    Kind kind() const { return kind_; }
    double c0() const { return c0_; }
    double c1() const { return c1_; }
    bool is_null() const { return c0_ == 0.0; }

private:
    StepSchedule(Kind kind, double c0, double c1) : kind_(kind), c0_(c0), c1_(c1) {}

    Kind kind_;
    double c0_;  // gamma for the constant kind
    double c1_;
};

inline double step_at(const StepSchedule& schedule, std::int64_t k) { return schedule.at(k); }

struct ScheduleCheck {
    std::int64_t k;
    double gamma;
    double ratio;     // gamma_{k-1} / gamma_k, 1 at k = 1
    bool ratio_ok;    // ratio <= 1 + gamma_k * mu_tilde / 4
    bool cap_ok;      // gamma_k <= gamma_cap
};

struct ScheduleReport {
    std::vector<ScheduleCheck> checks;  // k = 1..K
    std::optional<std::int64_t> first_ratio_violation;
    std::optional<std::int64_t> first_cap_violation;

    bool ratio_passes() const { return !first_ratio_violation; }
    bool cap_passes() const { return !first_cap_violation; }
    bool passes() const { return ratio_passes() && cap_passes(); }
};

/// Verifies the structurally checkable step-size conditions of the rate
/// theorem over k = 1..horizon: non-increasing steps, the ratio condition
/// gamma_{k-1}/gamma_k <= 1 + gamma_k * mu_tilde / 4 (checked from k = 2,
/// the first index with a predecessor) and the caller-supplied cap.
/// Throws std::invalid_argument for horizon < 2, gamma_cap <= 0, a null
/// schedule, or a schedule that increases somewhere in 1..horizon.
ScheduleReport check_schedule(const StepSchedule& schedule, const ProblemConstants& constants,
                              std::int64_t horizon, double gamma_cap);

/// Seeded pseudo-random source. Equal seeds and equal call sequences give
/// bit-identical outputs. Single owner; never share across threads.
class RngStream {
public:
    explicit RngStream(std::uint64_t seed);

    /// Independent child stream for a fixed component index.
    RngStream derive(std::uint64_t stream_index) const;

    std::uint64_t seed() const { return seed_; }

    double uniform();                            // [0, 1)
    double normal();                             // N(0, 1)
    std::size_t uniform_index(std::size_t n);    // {0, ..., n-1}
    std::uint64_t next_u64() { return engine_(); }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// Fixed sub-stream indices shared by every run.
namespace streams {
inline constexpr std::uint64_t agents = 0;
inline constexpr std::uint64_t learner = 1;
inline constexpr std::uint64_t dataset = 2;
inline constexpr std::uint64_t trials = 3;
}  // namespace streams

}  // namespace perfsim
