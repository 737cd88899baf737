#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tdmix/approx.hpp"
#include "tdmix/chain.hpp"
#include "tdmix/td.hpp"

namespace tdmix::decomp {

/// Parameter vector at which the expected TD update vanishes.
struct FixedPoint {
    std::vector<double> theta_star;
    double residual = 0.0;  // |E_pi[delta * grad]| at theta_star
    std::string method;     // "direct-solve" or "long-run-average"
};

/// Per-checkpoint split of the parameter error e_t = theta_t - theta_star into
/// the initial offset, the accumulated martingale part M_t and the accumulated
/// conditional-mean drift R_t:
///     e_t = (theta_0 - theta_star) + M_t + R_t.
/// d_k = alpha_k (delta_k - E[delta_k | s_k, theta_k]) grad_k is centered with
/// the exact kernel conditional mean, so M_t is a true martingale.
/// The identity is exact for unprojected dynamics; when spectral projection
/// fires on a ReLU run, reconstruction_gap equals the accumulated projection
/// displacement rather than a defect.
struct Decomposition {
    std::vector<std::size_t> ts;            // checkpoint steps
    std::vector<double> err;                 // |e_t|
    std::vector<double> norm_m;              // |M_t|
    std::vector<double> norm_r;              // |R_t|
    std::vector<double> reconstruction_gap;  // |e_0 + M_t + R_t - e_t| per checkpoint
    std::vector<double> norm_e0_plus_r;      // |e_0 + R_t|: the bias path toward theta_star
    std::vector<std::vector<double>> m;      // M_t vectors per checkpoint
    std::vector<std::vector<double>> r;      // R_t vectors per checkpoint
    double e0_norm = 0.0;

    // Full per-step centered TD errors u_k = delta_k - E[delta_k | s_k, theta_k]
    // together with the visited state, for conditional-mean bin tests.
    std::vector<double> centered_delta;
    std::vector<std::uint32_t> centered_state;
};

/// theta_star for a linear model: solves A theta = b with
/// A = Phi^T D (Phi - discount P Phi), b = Phi^T D r, D = diag(pi).
[[nodiscard]] FixedPoint linear_fixed_point(const chain::TransitionKernel& kernel,
                                            const approx::FeatureMap& features, double discount);

/// Exact stationary mean field g(theta) = sum_s pi(s) E[delta | s] grad(s).
[[nodiscard]] std::vector<double> expected_update(const chain::TransitionKernel& kernel,
                                                  const approx::ValueModel& model, double discount);

/// Exact conditional mean E[delta | s, theta] from the kernel row.
[[nodiscard]] double conditional_td_error(const chain::TransitionKernel& kernel,
                                          const approx::ValueModel& model, std::size_t s,
                                          double discount);

/// Per-state version of the mean field: E[delta | s] grad(s), no pi-average.
[[nodiscard]] std::vector<double> expected_update_at(const chain::TransitionKernel& kernel,
                                                     const approx::ValueModel& model,
                                                     double discount, std::size_t s);

/// Replays a recorded run and accumulates the decomposition at every
/// checkpoint. Requires the full per-step stream (throws MissingStepData
/// otherwise). `model0` must be the run's initial model.
[[nodiscard]] Decomposition decompose(const td::IterateHistory& history,
                                      const chain::TransitionKernel& kernel,
                                      const approx::ValueModel& model0,
                                      std::span<const double> theta_star,
                                      bool keep_centered_stream = false);

/// Mean |M_t|^2 across seeds per checkpoint with percentile-bootstrap CIs.
struct VarianceCurve {
    std::vector<std::size_t> ts;
    std::vector<double> mean_sq;
    std::vector<double> ci_lo;
    std::vector<double> ci_hi;
};

[[nodiscard]] VarianceCurve martingale_variance_curve(const std::vector<Decomposition>& decomps,
                                                      std::uint64_t bootstrap_seed = 1,
                                                      std::size_t bootstrap_rounds = 1000);

/// Empirical (E|theta_t - theta_star|^p)^(1/p) across seeds per checkpoint,
/// with percentile-bootstrap CIs. p must be 2 or 4; >= 30 seeds required.
struct MomentCurve {
    std::vector<std::size_t> ts;
    std::vector<double> value;
    std::vector<double> ci_lo;
    std::vector<double> ci_hi;
    int p = 2;
};

[[nodiscard]] MomentCurve moment_curve(const std::vector<std::vector<double>>& err_curves,
                                       const std::vector<std::size_t>& ts, int p,
                                       std::uint64_t bootstrap_seed = 1,
                                       std::size_t bootstrap_rounds = 1000);

/// Central finite differences of expected_update around theta_star, negated so
/// the linear tabular case recovers H = Phi^T D (Phi - discount P Phi).
/// Reports the eigenvalues of the symmetrized part.
struct JacobianEstimate {
    Mat h;                          // d x d, H = -d(expected_update)/d(theta)
    std::vector<double> sym_eigenvalues;  // ascending
    double lambda_min = 0.0;
    bool positive_definite = false;
};

[[nodiscard]] JacobianEstimate estimate_update_jacobian(const chain::TransitionKernel& kernel,
                                                        const approx::ValueModel& model_at_star,
                                                        double discount, double probe_scale = 1e-5);

}  // namespace tdmix::decomp
