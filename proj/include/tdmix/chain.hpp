#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "tdmix/stats.hpp"

namespace tdmix::chain {

/// Finite Markov reward process: a row-stochastic transition matrix plus a
/// deterministic per-state reward. Immutable after construction; construction
/// validates row sums, reward bounds, irreducibility and (by default)
/// aperiodicity, so downstream code can rely on a unique stationary law.
class TransitionKernel {
public:
    /// Validates and builds a kernel.
    ///   - every row of `p` must sum to 1 within 1e-12, entries >= 0
    ///   - |rewards[i]| <= r_max
    ///   - the chain must be irreducible (throws ReducibleChain) and, unless
    ///     `allow_periodic` is set, aperiodic (throws PeriodicChain). The
    ///     opt-out exists for diagnostic kernels such as permutation chains.
    static TransitionKernel make(Mat p, std::vector<double> rewards, double r_max,
                                 std::string kind = "matrix", bool allow_periodic = false);

    [[nodiscard]] std::size_t n_states() const { return p_.rows; }
    [[nodiscard]] const Mat& p() const { return p_; }
    [[nodiscard]] double p(std::size_t i, std::size_t j) const { return p_(i, j); }
    [[nodiscard]] const std::vector<double>& rewards() const { return rewards_; }
    [[nodiscard]] double reward(std::size_t s) const { return rewards_[s]; }
    [[nodiscard]] double r_max() const { return r_max_; }
    [[nodiscard]] const std::string& kind() const { return kind_; }
    [[nodiscard]] bool periodic() const { return periodic_; }

    /// Cumulative-probability rows used for inverse-CDF sampling.
    [[nodiscard]] const Mat& row_cdf() const { return cdf_; }

    /// Draws the next state from row `s` with one uniform variate.
    [[nodiscard]] std::size_t step_from(std::size_t s, double u) const;

private:
    TransitionKernel() = default;
    Mat p_;
    Mat cdf_;
    std::vector<double> rewards_;
    double r_max_ = 0.0;
    std::string kind_;
    bool periodic_ = false;
};

/// Seeded sample path. rewards[t] is the reward collected on the transition
/// out of states[t], so rewards has one fewer entry than states.
struct Trajectory {
    std::vector<std::uint32_t> states;
    std::vector<double> rewards;
    std::uint64_t seed = 0;
    std::string kernel_id;
};

/// Lyapunov drift certificate for E[V(x_{t+1}) | x_t] <= V(x_t) - lambda W(x_t) + b.
struct DriftCertificate {
    std::vector<double> v;       // V >= 1 per state
    std::vector<double> w;       // W >= 0 per state
    double lambda = 0.0;
    double b = 0.0;
    std::vector<bool> holds;     // filled by check_drift
    [[nodiscard]] bool valid() const {
        for (bool h : holds)
            if (!h) return false;
        return !holds.empty();
    }
};

/// Unique stationary distribution pi with pi P = pi, sum pi = 1, entries > 0.
/// Dense linear solve with a power-iteration fallback; residual <= 1e-10.
[[nodiscard]] std::vector<double> stationary_distribution(const TransitionKernel& kernel);

/// Exact total-variation distance (1/2)|e_start P^t - pi|_1 via repeated
/// vector-matrix products.
[[nodiscard]] double tv_to_stationary(const TransitionKernel& kernel, std::size_t start,
                                      std::size_t t);

/// TV distances for every t in [0, t_max]; one pass, cheaper than repeated calls.
[[nodiscard]] std::vector<double> tv_decay_curve(const TransitionKernel& kernel,
                                                 std::size_t start, std::size_t t_max);

/// Truncated discrete renewal ("house of cards") chain: from state 0 jump to
/// state j with probability proportional to (j+1)^-(kappa+1) (tail mass folded
/// into the last state); from state j > 0 step deterministically to j-1.
/// Return times to 0 are heavy tailed, which makes the mixing polynomial with
/// exponent controlled by kappa over the pre-truncation lag window.
[[nodiscard]] TransitionKernel make_renewal_chain(double kappa, std::size_t n_states,
                                                  const std::function<double(std::size_t)>& reward_fn,
                                                  double r_max = 1.0);

/// Start state: fixed index or a stationary draw.
struct StartState {
    static StartState fixed(std::size_t s) { return StartState{s, false}; }
    static StartState stationary() { return StartState{0, true}; }
    std::size_t index = 0;
    bool from_stationary = false;
};

/// Seeded sample path: pure function of (kernel, start, length, seed).
/// rewards[t] = rewards[states[t]]; transitions by inverse CDF on the row.
[[nodiscard]] Trajectory sample_trajectory(const TransitionKernel& kernel, StartState start,
                                           std::size_t length, std::uint64_t seed);

/// Fills cert.holds[i] = ((P V)[i] <= V[i] - lambda W[i] + b + 1e-12).
[[nodiscard]] DriftCertificate check_drift(const TransitionKernel& kernel, DriftCertificate cert);

}  // namespace tdmix::chain
