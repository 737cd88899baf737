#include "tdmix/td.hpp"

#include <algorithm>
#include <cmath>

#include "tdmix/errors.hpp"

namespace tdmix::td {

StepSchedule::StepSchedule(double c_alpha_, double eta_) : c_alpha(c_alpha_), eta(eta_) {
    if (!(c_alpha > 0.0)) throw InvalidParameter("c_alpha must be positive");
    if (!(eta > 0.5) || !(eta <= 1.0)) throw InvalidParameter("eta must lie in (0.5, 1]");
}

double StepSchedule::at(std::size_t t) const {
    if (t < 1) throw InvalidParameter("step index must be >= 1");
    return c_alpha * std::pow(static_cast<double>(t), -eta);
}

double td_error(const approx::ValueModel& model, std::size_t s, double r, std::size_t s_next,
                double discount) {
    return r + discount * approx::value(model, s_next) - approx::value(model, s);
}

double td_step_inplace(approx::ValueModel& model, std::size_t s, double r, std::size_t s_next,
                       double alpha, double discount, std::span<double> grad_buf,
                       long step_index) {
    if (!(alpha > 0.0)) throw InvalidParameter("alpha must be positive");
    double delta = td_error(model, s, r, s_next, discount);
    if (!std::isfinite(delta))
        throw NonFiniteUpdate("non-finite TD error at step " + std::to_string(step_index),
                              step_index);
    approx::grad_into(model, s, grad_buf);

    auto theta = approx::params(model);
    double scale = alpha * delta;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        double g = grad_buf[i];
        if (!std::isfinite(g))
            throw NonFiniteUpdate("non-finite gradient at step " + std::to_string(step_index),
                                  step_index);
        theta[i] += scale * g;
    }
    if (auto* net = std::get_if<approx::ReluNetwork>(&model)) net->project_spectral();
    return delta;
}

approx::ValueModel td_step(const approx::ValueModel& model, std::size_t s, double r,
                           std::size_t s_next, double alpha, double discount) {
    approx::ValueModel next = model;
    std::vector<double> buf(approx::param_dim(next), 0.0);
    td_step_inplace(next, s, r, s_next, alpha, discount, buf, 0);
    return next;
}

std::vector<std::size_t> checkpoint_grid(std::size_t t_total) {
    std::vector<std::size_t> ts;
    double g = 1.0;
    while (static_cast<std::size_t>(g) <= t_total) {
        ts.push_back(static_cast<std::size_t>(g));
        double next = std::max(g + 1.0, std::round(g * 1.2));
        g = next;
    }
    for (std::size_t d = 1; d <= t_total && d > 0; d *= 2) {
        ts.push_back(d);
        if (d > t_total / 2) break;
    }
    ts.push_back(t_total);
    std::sort(ts.begin(), ts.end());
    ts.erase(std::unique(ts.begin(), ts.end()), ts.end());
    return ts;
}

IterateHistory run_td(const chain::TransitionKernel& kernel, const approx::ValueModel& model0,
                      const StepSchedule& schedule, double discount, std::size_t t_total,
                      std::uint64_t seed, const RunOptions& options) {
    if (t_total < 1) throw InvalidParameter("run length must be >= 1");
    if (discount < 0.0 || discount >= 1.0) throw InvalidParameter("discount must lie in [0, 1)");

    IterateHistory history;
    history.trajectory = chain::sample_trajectory(kernel, options.start, t_total, seed);
    history.seed = seed;
    history.discount = discount;
    history.schedule = schedule;
    history.model_kind = std::holds_alternative<approx::LinearModel>(model0) ? "linear" : "relu";
    history.has_stream = options.record_stream;

    std::vector<std::size_t> grid;
    if (options.checkpoint_every == 0) {
        grid = checkpoint_grid(t_total);
    } else {
        for (std::size_t t = options.checkpoint_every; t <= t_total; t += options.checkpoint_every)
            grid.push_back(t);
        if (grid.empty() || grid.back() != t_total) grid.push_back(t_total);
    }

    approx::ValueModel model = model0;
    std::vector<double> grad_buf(approx::param_dim(model), 0.0);
    approx::ValueModel before = model;  // reused only when an observer is attached

    if (options.record_stream) {
        history.alphas.reserve(t_total);
        history.deltas.reserve(t_total);
    }
    history.checkpoints.reserve(grid.size());

    std::size_t next_cp = 0;
    for (std::size_t t = 1; t <= t_total; ++t) {
        std::size_t s = history.trajectory.states[t - 1];
        std::size_t s_next = history.trajectory.states[t];
        double r = history.trajectory.rewards[t - 1];
        double alpha = schedule.at(t);

        if (options.observer) before = model;
        double delta = td_step_inplace(model, s, r, s_next, alpha, discount, grad_buf,
                                       static_cast<long>(t));
        if (options.observer) options.observer(t, before, model, alpha, delta);

        if (options.record_stream) {
            history.alphas.push_back(alpha);
            history.deltas.push_back(delta);
        }
        if (next_cp < grid.size() && grid[next_cp] == t) {
            auto p = approx::params(model);
            history.checkpoints.push_back({t, std::vector<double>(p.begin(), p.end())});
            ++next_cp;
        }
    }
    return history;
}

std::vector<double> error_curve(const IterateHistory& history, std::span<const double> theta_star) {
    std::vector<double> errs;
    errs.reserve(history.checkpoints.size());
    for (const auto& cp : history.checkpoints) {
        if (cp.theta.size() != theta_star.size())
            throw DimensionMismatch("theta_star dimension does not match checkpoints");
        double acc = 0.0;
        for (std::size_t i = 0; i < theta_star.size(); ++i) {
            double d = cp.theta[i] - theta_star[i];
            acc += d * d;
        }
        errs.push_back(std::sqrt(acc));
    }
    return errs;
}

}  // namespace tdmix::td
