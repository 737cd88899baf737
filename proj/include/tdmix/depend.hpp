#pragma once

#include <cstdint>
#include <vector>

#include "tdmix/chain.hpp"
#include "tdmix/rates.hpp"

namespace tdmix::depend {

/// Non-overlapping contiguous blocks of a trajectory with the block sums of a
/// scalar functional of the state. K = floor(n / b); the trailing remainder is
/// discarded.
struct BlockSet {
    std::size_t block_size = 0;
    std::vector<double> sums;  // Y_k, k = 0..K-1
    [[nodiscard]] std::size_t count() const { return sums.size(); }
};

/// Lag-covariance decay estimate with its power-law fit and a geometric-regime
/// flag (set when a log-linear fit explains the decay better than a power law).
struct MixingEstimate {
    std::vector<double> lags;
    std::vector<double> values;
    rates::PowerLawFit fit;
    rates::LogLinearFit geometric_fit;
    bool geometric_regime = false;
    rates::Window window;
};

/// Exact stationary lag covariance |f^T D P^k g - (pi f)(pi g)| for each lag,
/// followed by a power-law fit over the window. Lags below the numerical floor
/// (1e-12) are dropped from the fit.
[[nodiscard]] MixingEstimate covariance_mixing(const chain::TransitionKernel& kernel,
                                               const std::vector<double>& f,
                                               const std::vector<double>& g,
                                               const std::vector<std::size_t>& lags,
                                               rates::Window fit_window);

[[nodiscard]] BlockSet make_blocks(const chain::Trajectory& traj,
                                   const std::vector<double>& functional, std::size_t block_size);

/// Cross-block covariance versus gap, estimated across seeds, with the
/// split-sample envelope check C b^2 m^-beta against the held-out half.
struct BlockReport {
    std::size_t block_size = 0;
    std::vector<double> gaps;        // m = |k - j|
    std::vector<double> cov;         // |Cov(Y_k, Y_{k+m})| averaged over k (fit half)
    std::vector<double> cov_holdout; // same on the held-out half
    rates::PowerLawFit fit;          // power law of cov vs gap
    double envelope_c = 0.0;         // fitted on the first half
    double beta_nominal = 0.0;
    bool envelope_dominates_holdout = false;
};

[[nodiscard]] BlockReport block_covariance_check(const std::vector<BlockSet>& block_sets,
                                                 double beta_nominal, rates::Window fit_window);

/// One maximal-coupling path: both chains share the kernel and one uniform
/// draw per step; they move together with the overlap probability
/// sum_s min(P(x,s), P(y,s)) and stay together after meeting.
struct CouplingPath {
    std::vector<std::uint8_t> unequal;  // 1{x_t != y_t} for t = 0..T
    std::size_t meeting_time = 0;       // first t with x_t == y_t (T+1 if never)
    bool met = false;
};

[[nodiscard]] CouplingPath couple(const chain::TransitionKernel& kernel, std::size_t x0,
                                  std::size_t y0, std::size_t t_max, std::uint64_t seed);

/// Averaged coupling diagnostics over seeds, with the exact TV lower bound
/// (1/2)|e_x0 P^t - e_y0 P^t|_1 for comparison.
struct CouplingReport {
    std::vector<double> p_unequal;  // P_hat(x_t != y_t), t = 0..T
    std::vector<double> tv_lower;   // exact coupling inequality lower bound
    std::size_t n_seeds = 0;
    rates::PowerLawFit fit;         // fit of p_unequal over the window
};

[[nodiscard]] CouplingReport coupling_study(const chain::TransitionKernel& kernel, std::size_t x0,
                                            std::size_t y0, std::size_t t_max,
                                            std::size_t n_seeds, std::uint64_t base_seed,
                                            rates::Window fit_window);

/// Empirical tail P(|mean - pi f| > eps) against the Bernstein-form bound
/// 2 exp(-n eps^2 / (2 C_beta + (2/3) b M eps)) with the block size
/// b = round(n^(1/(beta_hat+1))). C_beta is calibrated on an independent seed
/// batch; domination is reported on the held-out batch.
struct ConcentrationReport {
    std::vector<double> epsilons;
    std::vector<double> empirical;  // held-out exceedance frequencies
    std::vector<double> bound;
    double c_beta = 0.0;
    std::size_t block_size = 0;
    std::size_t n = 0;
    bool bound_dominates = false;
};

[[nodiscard]] ConcentrationReport concentration_tail(const chain::TransitionKernel& kernel,
                                                     const std::vector<double>& functional,
                                                     std::size_t n,
                                                     const std::vector<double>& epsilons,
                                                     std::size_t n_seeds, double beta_hat,
                                                     std::uint64_t base_seed);

}  // namespace tdmix::depend
