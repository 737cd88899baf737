#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "tdmix/approx.hpp"
#include "tdmix/chain.hpp"

namespace tdmix::td {

/// Polynomially decaying step size alpha_t = c_alpha * t^-eta, eta in (1/2, 1].
struct StepSchedule {
    StepSchedule(double c_alpha_, double eta_);
    double c_alpha;
    double eta;
    [[nodiscard]] double at(std::size_t t) const;  // t >= 1
};

struct Checkpoint {
    std::size_t t = 0;
    std::vector<double> theta;
};

/// Record of one TD run. The per-step scalar streams (alpha, delta) plus the
/// trajectory are enough to replay the run exactly; theta itself is stored
/// only at checkpoints.
struct IterateHistory {
    chain::Trajectory trajectory;
    std::vector<double> alphas;
    std::vector<double> deltas;
    std::vector<Checkpoint> checkpoints;
    std::uint64_t seed = 0;
    double discount = 0.0;
    StepSchedule schedule{1.0, 1.0};
    std::string model_kind;
    bool has_stream = true;  // false when recorded without full per-step data

    [[nodiscard]] std::size_t steps() const { return alphas.size(); }
};

/// TD error delta = r + discount * value(s_next) - value(s).
[[nodiscard]] double td_error(const approx::ValueModel& model, std::size_t s, double r,
                              std::size_t s_next, double discount);

/// One in-place TD(0) update theta += alpha * delta * grad(s). ReLU models are
/// spectrally projected after the update; linear models are never projected.
/// `grad_buf` must have param_dim entries. Returns delta.
double td_step_inplace(approx::ValueModel& model, std::size_t s, double r, std::size_t s_next,
                       double alpha, double discount, std::span<double> grad_buf, long step_index);

/// Value-returning form of the update.
[[nodiscard]] approx::ValueModel td_step(const approx::ValueModel& model, std::size_t s, double r,
                                         std::size_t s_next, double alpha, double discount);

/// Checkpoint grid: geometric spacing (powers of 1.2) merged with dyadic steps,
/// always including 1 and T; evenly spaced abscissae for log-log fits.
[[nodiscard]] std::vector<std::size_t> checkpoint_grid(std::size_t t_total);

struct RunOptions {
    chain::StartState start = chain::StartState::fixed(0);
    std::size_t checkpoint_every = 0;  // 0 = geometric grid
    bool record_stream = true;
    /// Called after each update with (t, model_before, model_after, alpha, delta).
    std::function<void(std::size_t, const approx::ValueModel&, const approx::ValueModel&, double,
                       double)>
        observer;
};

/// Streams one sampled trajectory through TD(0): every transition is consumed
/// in order, nothing is dropped or subsampled. Deterministic given the seed.
[[nodiscard]] IterateHistory run_td(const chain::TransitionKernel& kernel,
                                    const approx::ValueModel& model0, const StepSchedule& schedule,
                                    double discount, std::size_t t_total, std::uint64_t seed,
                                    const RunOptions& options = {});

/// Error curve |theta_t - theta_star| at the history's checkpoints.
[[nodiscard]] std::vector<double> error_curve(const IterateHistory& history,
                                              std::span<const double> theta_star);

}  // namespace tdmix::td
