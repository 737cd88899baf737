#include "tdmix/decomp.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>

#include "tdmix/errors.hpp"
#include "tdmix/rng.hpp"

namespace tdmix::decomp {

namespace {

// Percentile bootstrap of the mean over seeds, one derived stream per call site.
void bootstrap_mean_ci(const std::vector<std::vector<double>>& per_seed_values,
                       std::uint64_t seed, std::size_t rounds, std::vector<double>& lo,
                       std::vector<double>& hi) {
    const std::size_t n_seeds = per_seed_values.size();
    const std::size_t n_points = per_seed_values.empty() ? 0 : per_seed_values.front().size();
    lo.assign(n_points, 0.0);
    hi.assign(n_points, 0.0);
    if (n_seeds == 0 || n_points == 0) return;

    Rng rng = make_stream(seed, "bootstrap-ci");
    std::vector<std::vector<double>> resampled(rounds, std::vector<double>(n_points, 0.0));
    for (std::size_t b = 0; b < rounds; ++b) {
        for (std::size_t i = 0; i < n_seeds; ++i) {
            std::size_t pick = rng.next_below(n_seeds);
            for (std::size_t j = 0; j < n_points; ++j)
                resampled[b][j] += per_seed_values[pick][j];
        }
        for (std::size_t j = 0; j < n_points; ++j)
            resampled[b][j] /= static_cast<double>(n_seeds);
    }
    std::vector<double> column(rounds);
    for (std::size_t j = 0; j < n_points; ++j) {
        for (std::size_t b = 0; b < rounds; ++b) column[b] = resampled[b][j];
        std::sort(column.begin(), column.end());
        lo[j] = column[static_cast<std::size_t>(0.025 * static_cast<double>(rounds))];
        hi[j] = column[static_cast<std::size_t>(0.975 * static_cast<double>(rounds))];
    }
}

}  // namespace

FixedPoint linear_fixed_point(const chain::TransitionKernel& kernel,
                              const approx::FeatureMap& features, double discount) {
    const std::size_t n = kernel.n_states();
    const std::size_t d = features.dim();
    if (features.n_states() != n) throw DimensionMismatch("feature map does not match kernel");

    auto pi = chain::stationary_distribution(kernel);

    Eigen::MatrixXd phi(n, d);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t j = 0; j < d; ++j) phi(static_cast<long>(s), static_cast<long>(j)) = features.phi(s, j);
    Eigen::MatrixXd p(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) p(static_cast<long>(i), static_cast<long>(j)) = kernel.p(i, j);
    Eigen::VectorXd dpi(n), r(n);
    for (std::size_t s = 0; s < n; ++s) {
        dpi(static_cast<long>(s)) = pi[s];
        r(static_cast<long>(s)) = kernel.reward(s);
    }

    Eigen::MatrixXd a = phi.transpose() * dpi.asDiagonal() * (phi - discount * (p * phi));
    Eigen::VectorXd b = phi.transpose() * dpi.asDiagonal() * r;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    lu.setThreshold(1e-10);
    if (!lu.isInvertible())
        throw SingularSystem("feature matrix is rank-deficient under the stationary distribution");
    Eigen::VectorXd theta = lu.solve(b);

    FixedPoint fp;
    fp.theta_star.assign(theta.data(), theta.data() + d);
    fp.method = "direct-solve";
    Eigen::VectorXd resid = b - a * theta;
    fp.residual = resid.norm();
    return fp;
}

double conditional_td_error(const chain::TransitionKernel& kernel, const approx::ValueModel& model,
                            std::size_t s, double discount) {
    double exp_next = 0.0;
    for (std::size_t j = 0; j < kernel.n_states(); ++j) {
        double pj = kernel.p(s, j);
        if (pj > 0.0) exp_next += pj * approx::value(model, j);
    }
    return kernel.reward(s) + discount * exp_next - approx::value(model, s);
}

std::vector<double> expected_update_at(const chain::TransitionKernel& kernel,
                                       const approx::ValueModel& model, double discount,
                                       std::size_t s) {
    double mean_delta = conditional_td_error(kernel, model, s, discount);
    auto g = approx::grad(model, s);
    for (double& v : g) v *= mean_delta;
    return g;
}

std::vector<double> expected_update(const chain::TransitionKernel& kernel,
                                    const approx::ValueModel& model, double discount) {
    auto pi = chain::stationary_distribution(kernel);
    const std::size_t d = approx::param_dim(model);
    std::vector<double> field(d, 0.0);
    std::vector<double> g(d, 0.0);
    for (std::size_t s = 0; s < kernel.n_states(); ++s) {
        double mean_delta = conditional_td_error(kernel, model, s, discount);
        approx::grad_into(model, s, g);
        double w = pi[s] * mean_delta;
        for (std::size_t j = 0; j < d; ++j) field[j] += w * g[j];
    }
    return field;
}

Decomposition decompose(const td::IterateHistory& history, const chain::TransitionKernel& kernel,
                        const approx::ValueModel& model0, std::span<const double> theta_star,
                        bool keep_centered_stream) {
    if (!history.has_stream || history.alphas.empty())
        throw MissingStepData("history was recorded without the full per-step stream");
    const std::size_t t_total = history.steps();
    const std::size_t d = approx::param_dim(model0);
    if (theta_star.size() != d) throw DimensionMismatch("theta_star dimension mismatch");

    const bool linear = std::holds_alternative<approx::LinearModel>(model0);

    // For linear models E[delta | s, theta] = r(s) + (discount * (P Phi)[s] - Phi[s]) . theta;
    // precomputing P Phi makes the replay O(d) per step.
    Mat pphi;
    const approx::FeatureMap* features = nullptr;
    if (linear) {
        features = &std::get<approx::LinearModel>(model0).features;
        pphi = Mat(kernel.n_states(), d, 0.0);
        for (std::size_t i = 0; i < kernel.n_states(); ++i)
            for (std::size_t j = 0; j < kernel.n_states(); ++j) {
                double pij = kernel.p(i, j);
                if (pij == 0.0) continue;
                for (std::size_t c = 0; c < d; ++c) pphi(i, c) += pij * features->phi(j, c);
            }
    }

    approx::ValueModel model = model0;
    std::vector<double> grad_buf(d, 0.0);
    std::vector<KahanSum> m_acc(d), r_acc(d);

    std::vector<double> e0(d, 0.0);
    {
        auto p0 = approx::params(model0);
        for (std::size_t j = 0; j < d; ++j) e0[j] = p0[j] - theta_star[j];
    }

    Decomposition out;
    out.e0_norm = norm2(e0);
    if (keep_centered_stream) {
        out.centered_delta.reserve(t_total);
        out.centered_state.reserve(t_total);
    }

    std::size_t next_cp = 0;
    for (std::size_t t = 1; t <= t_total; ++t) {
        std::size_t s = history.trajectory.states[t - 1];
        std::size_t s_next = history.trajectory.states[t];
        double r = history.trajectory.rewards[t - 1];
        double alpha = history.alphas[t - 1];

        double mean_delta;
        if (linear) {
            const auto& theta = std::get<approx::LinearModel>(model).theta;
            double acc = 0.0;
            auto row = features->row(s);
            for (std::size_t c = 0; c < d; ++c)
                acc += (history.discount * pphi(s, c) - row[c]) * theta[c];
            mean_delta = kernel.reward(s) + acc;
        } else {
            mean_delta = conditional_td_error(kernel, model, s, history.discount);
        }

        double delta = td::td_step_inplace(model, s, r, s_next, alpha, history.discount, grad_buf,
                                           static_cast<long>(t));
        // a point-mass row makes the conditional mean equal delta itself
        double centered = kernel.p(s, s_next) == 1.0 ? 0.0 : delta - mean_delta;
        for (std::size_t j = 0; j < d; ++j) {
            m_acc[j].add(alpha * centered * grad_buf[j]);
            r_acc[j].add(alpha * mean_delta * grad_buf[j]);
        }
        if (keep_centered_stream) {
            out.centered_delta.push_back(centered);
            out.centered_state.push_back(static_cast<std::uint32_t>(s));
        }

        if (next_cp < history.checkpoints.size() && history.checkpoints[next_cp].t == t) {
            const auto& cp = history.checkpoints[next_cp];
            std::vector<double> mt(d), rt(d);
            double err_sq = 0.0, gap_sq = 0.0, mn = 0.0, rn = 0.0, biased_sq = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                mt[j] = m_acc[j].value();
                rt[j] = r_acc[j].value();
                double e = cp.theta[j] - theta_star[j];
                err_sq += e * e;
                double gap = e0[j] + mt[j] + rt[j] - e;
                gap_sq += gap * gap;
                mn += mt[j] * mt[j];
                rn += rt[j] * rt[j];
                double biased = e0[j] + rt[j];
                biased_sq += biased * biased;
            }
            out.ts.push_back(t);
            out.err.push_back(std::sqrt(err_sq));
            out.norm_m.push_back(std::sqrt(mn));
            out.norm_r.push_back(std::sqrt(rn));
            out.reconstruction_gap.push_back(std::sqrt(gap_sq));
            out.norm_e0_plus_r.push_back(std::sqrt(biased_sq));
            out.m.push_back(std::move(mt));
            out.r.push_back(std::move(rt));
            ++next_cp;
        }
    }
    return out;
}

VarianceCurve martingale_variance_curve(const std::vector<Decomposition>& decomps,
                                        std::uint64_t bootstrap_seed,
                                        std::size_t bootstrap_rounds) {
    if (decomps.size() < 30)
        throw InsufficientSeeds("martingale variance curve needs at least 30 seeds");
    const auto& ts = decomps.front().ts;
    std::vector<std::vector<double>> sq(decomps.size());
    for (std::size_t i = 0; i < decomps.size(); ++i) {
        if (decomps[i].ts != ts) throw DimensionMismatch("checkpoint grids differ across seeds");
        sq[i].resize(ts.size());
        for (std::size_t j = 0; j < ts.size(); ++j)
            sq[i][j] = decomps[i].norm_m[j] * decomps[i].norm_m[j];
    }

    VarianceCurve curve;
    curve.ts = ts;
    curve.mean_sq.resize(ts.size());
    for (std::size_t j = 0; j < ts.size(); ++j) {
        KahanSum acc;
        for (const auto& row : sq) acc.add(row[j]);
        curve.mean_sq[j] = acc.value() / static_cast<double>(decomps.size());
    }
    bootstrap_mean_ci(sq, bootstrap_seed, bootstrap_rounds, curve.ci_lo, curve.ci_hi);
    return curve;
}

MomentCurve moment_curve(const std::vector<std::vector<double>>& err_curves,
                         const std::vector<std::size_t>& ts, int p, std::uint64_t bootstrap_seed,
                         std::size_t bootstrap_rounds) {
    if (err_curves.size() < 30) throw InsufficientSeeds("moment curve needs at least 30 seeds");
    if (p != 2 && p != 4) throw InvalidParameter("moment order p must be 2 or 4");

    std::vector<std::vector<double>> powered(err_curves.size());
    for (std::size_t i = 0; i < err_curves.size(); ++i) {
        if (err_curves[i].size() != ts.size())
            throw DimensionMismatch("error curve length does not match checkpoint grid");
        powered[i].resize(ts.size());
        for (std::size_t j = 0; j < ts.size(); ++j)
            powered[i][j] = std::pow(err_curves[i][j], p);
    }

    MomentCurve curve;
    curve.p = p;
    curve.ts = ts;
    curve.value.resize(ts.size());
    for (std::size_t j = 0; j < ts.size(); ++j) {
        KahanSum acc;
        for (const auto& row : powered) acc.add(row[j]);
        curve.value[j] =
            std::pow(acc.value() / static_cast<double>(err_curves.size()), 1.0 / p);
    }
    std::vector<double> lo, hi;
    bootstrap_mean_ci(powered, bootstrap_seed, bootstrap_rounds, lo, hi);
    curve.ci_lo.resize(ts.size());
    curve.ci_hi.resize(ts.size());
    for (std::size_t j = 0; j < ts.size(); ++j) {
        curve.ci_lo[j] = std::pow(std::max(lo[j], 0.0), 1.0 / p);
        curve.ci_hi[j] = std::pow(std::max(hi[j], 0.0), 1.0 / p);
    }
    return curve;
}

JacobianEstimate estimate_update_jacobian(const chain::TransitionKernel& kernel,
                                          const approx::ValueModel& model_at_star, double discount,
                                          double probe_scale) {
    const std::size_t d = approx::param_dim(model_at_star);
    JacobianEstimate est;
    est.h = Mat(d, d, 0.0);

    approx::ValueModel probe = model_at_star;
    auto theta = approx::params(probe);
    for (std::size_t j = 0; j < d; ++j) {
        double h = probe_scale * std::max(1.0, std::abs(theta[j]));
        double saved = theta[j];
        theta[j] = saved + h;
        auto up = expected_update(kernel, probe, discount);
        theta[j] = saved - h;
        auto down = expected_update(kernel, probe, discount);
        theta[j] = saved;
        for (std::size_t i = 0; i < d; ++i) est.h(i, j) = -(up[i] - down[i]) / (2.0 * h);
    }

    Eigen::MatrixXd hm(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j)
            hm(static_cast<long>(i), static_cast<long>(j)) = 0.5 * (est.h(i, j) + est.h(j, i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(hm);
    est.sym_eigenvalues.assign(eig.eigenvalues().data(), eig.eigenvalues().data() + d);
    est.lambda_min = est.sym_eigenvalues.front();
    est.positive_definite = est.lambda_min > 0.0;
    return est;
}

}  // namespace tdmix::decomp
