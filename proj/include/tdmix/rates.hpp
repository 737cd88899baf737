#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdmix/td.hpp"

namespace tdmix::rates {

/// Least-squares fit of log y on log t over a window: y ~ exp(intercept) * t^-exponent.
struct PowerLawFit {
    double exponent = 0.0;       // decay exponent (positive for decreasing series)
    double log_intercept = 0.0;
    double r_squared = 0.0;
    double t_min = 0.0;
    double t_max = 0.0;
    std::size_t n_points = 0;
};

struct Window {
    double t_min = 0.0;
    double t_max = 0.0;  // 0 = unbounded
    [[nodiscard]] bool contains(double t) const {
        return t >= t_min && (t_max <= 0.0 || t <= t_max);
    }
};

/// OLS of log y on log t. Throws NonPositiveValue if any y inside the window
/// is <= 0, WindowTooSmall if fewer than 6 points fall in the window.
[[nodiscard]] PowerLawFit fit_power_law(const std::vector<double>& ts,
                                        const std::vector<double>& ys, Window window);

/// OLS of log y on t (geometric decay y ~ exp(intercept) * rate^t). Used to
/// tell geometric from polynomial decay regimes.
struct LogLinearFit {
    double rate = 0.0;  // decay per unit t, y ~ C * exp(-rate * t)
    double log_intercept = 0.0;
    double r_squared = 0.0;
    std::size_t n_points = 0;
};

[[nodiscard]] LogLinearFit fit_log_linear(const std::vector<double>& ts,
                                          const std::vector<double>& ys, Window window);

enum class BoundVariant { LinearHp, NonlinearHp, ReluAppendix, MomentP };

[[nodiscard]] std::string to_string(BoundVariant v);

/// Two-term high-probability error envelope.
///   linear-hp / nonlinear-hp: C t^(-beta/2) + C' alpha_t^gamma
///   relu-appendix:            C t^(-(beta-1)/2) + C' t^(-eta beta)
///   moment-p:                 C t^(-beta/2) + C' alpha_t^(gamma/p)
struct BoundSpec {
    BoundVariant variant = BoundVariant::LinearHp;
    double c = 1.0;
    double c_prime = 1.0;
    double beta = 1.0;
    double eta = 1.0;
    double holder_gamma = 1.0;
    int p = 2;
    double delta = 0.1;
};

[[nodiscard]] std::vector<double> bound_curve(const BoundSpec& spec,
                                              const td::StepSchedule& schedule,
                                              const std::vector<std::size_t>& ts);

/// Asymptotically dominant exponent of the two-term envelope.
[[nodiscard]] double predicted_exponent(const BoundSpec& spec);

/// Per-checkpoint empirical (1-delta)-quantile across seeds, with a binomial
/// (normal-approximation) CI from neighboring order statistics.
struct QuantileCurve {
    std::vector<std::size_t> ts;
    std::vector<double> q;
    std::vector<double> ci_lo;
    std::vector<double> ci_hi;
    double delta = 0.1;
};

[[nodiscard]] QuantileCurve quantile_envelope(const std::vector<std::vector<double>>& err_curves,
                                              const std::vector<std::size_t>& ts, double delta);

/// Split-sample envelope verification: fit (C, C') on batch A by nonnegative
/// least squares of the quantile curve onto the two basis functions, scale up
/// minimally so the envelope dominates batch A, then check domination on the
/// held-out batch B and compare the fitted tail exponent of B's quantile curve
/// with the predicted one.
struct BoundReport {
    BoundSpec spec;                 // with fitted constants filled in
    bool domination = false;        // envelope >= held-out quantile everywhere
    double slack_min = 0.0;         // min (envelope - quantile) over checkpoints
    double quantile_exponent = 0.0; // fitted on batch B's quantile tail
    double quantile_fit_r2 = 0.0;
    double predicted = 0.0;         // min of the two envelope exponents
    double exponent_gap = 0.0;      // quantile_exponent - predicted
    bool basis_majorizes = true;    // false if even scaled basis cannot dominate batch A
};

[[nodiscard]] BoundReport verify_bound(const std::vector<std::vector<double>>& err_curves,
                                       const std::vector<std::size_t>& ts, BoundSpec spec,
                                       const td::StepSchedule& schedule, Window fit_window,
                                       double calibration_split = 0.5);

}  // namespace tdmix::rates
