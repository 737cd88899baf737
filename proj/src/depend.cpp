#include "tdmix/depend.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tdmix/errors.hpp"
#include "tdmix/rng.hpp"

namespace tdmix::depend {

MixingEstimate covariance_mixing(const chain::TransitionKernel& kernel,
                                 const std::vector<double>& f, const std::vector<double>& g,
                                 const std::vector<std::size_t>& lags, rates::Window fit_window) {
    const std::size_t n = kernel.n_states();
    if (f.size() != n || g.size() != n)
        throw DimensionMismatch("functionals must have one value per state");

    auto pi = chain::stationary_distribution(kernel);
    double pif = 0.0, pig = 0.0;
    for (std::size_t s = 0; s < n; ++s) {
        pif += pi[s] * f[s];
        pig += pi[s] * g[s];
    }

    std::size_t max_lag = lags.empty() ? 0 : *std::max_element(lags.begin(), lags.end());
    std::vector<double> pkg(g);  // P^k g, advanced one step at a time
    std::map<std::size_t, double> by_lag;

    std::size_t k = 0;
    for (std::size_t lag : lags) {
        while (k < lag) {
            pkg = multiply(kernel.p(), pkg);
            ++k;
        }
        double cross = 0.0;
        for (std::size_t s = 0; s < n; ++s) cross += pi[s] * f[s] * pkg[s];
        by_lag[lag] = std::abs(cross - pif * pig);
        if (lag >= max_lag) break;
    }

    MixingEstimate est;
    est.window = fit_window;
    for (auto [lag, value] : by_lag) {
        est.lags.push_back(static_cast<double>(lag));
        est.values.push_back(value);
    }

    // Fit only lags inside the window and above the numerical floor.
    std::vector<double> ft, fv;
    for (std::size_t i = 0; i < est.lags.size(); ++i) {
        if (est.lags[i] < 1.0) continue;
        if (!fit_window.contains(est.lags[i])) continue;
        if (est.values[i] < 1e-12) continue;
        ft.push_back(est.lags[i]);
        fv.push_back(est.values[i]);
    }
    rates::Window open;  // membership already applied
    est.fit = rates::fit_power_law(ft, fv, open);
    est.geometric_fit = rates::fit_log_linear(ft, fv, open);
    est.geometric_regime = est.geometric_fit.r_squared > est.fit.r_squared;
    return est;
}

BlockSet make_blocks(const chain::Trajectory& traj, const std::vector<double>& functional,
                     std::size_t block_size) {
    if (block_size < 1) throw InvalidParameter("block size must be >= 1");
    const std::size_t n = traj.states.size();
    if (n < 2 * block_size)
        throw TrajectoryTooShort("trajectory must cover at least two blocks");

    BlockSet set;
    set.block_size = block_size;
    const std::size_t k_blocks = n / block_size;
    set.sums.reserve(k_blocks);
    for (std::size_t k = 0; k < k_blocks; ++k) {
        KahanSum acc;
        for (std::size_t t = k * block_size; t < (k + 1) * block_size; ++t)
            acc.add(functional[traj.states[t]]);
        set.sums.push_back(acc.value());
    }
    return set;
}

BlockReport block_covariance_check(const std::vector<BlockSet>& block_sets, double beta_nominal,
                                   rates::Window fit_window) {
    if (block_sets.size() < 100)
        throw InsufficientSeeds("block covariance check needs at least 100 seeds");
    const std::size_t n_seeds = block_sets.size();
    const std::size_t k_blocks = block_sets.front().count();
    const std::size_t b = block_sets.front().block_size;
    for (const auto& set : block_sets)
        if (set.count() != k_blocks || set.block_size != b)
            throw DimensionMismatch("all block sets must share geometry");

    // Covariance across seeds at fixed block positions, averaged over
    // position, separately on each half of the seeds. Each seed's own
    // position-averaged product is kept as well: those are independent across
    // seeds and give a clean standard error for the envelope calibration.
    auto half_cov = [&](std::size_t lo, std::size_t hi, std::size_t gap, double& se_out) {
        const auto m = static_cast<double>(hi - lo);
        std::vector<double> per_position_mean_a, per_position_mean_b;
        std::size_t pairs = 0;
        for (std::size_t k = 0; k + gap < k_blocks; ++k) ++pairs;
        if (pairs == 0) {
            se_out = 0.0;
            return 0.0;
        }
        std::vector<double> mean_a(pairs, 0.0), mean_b(pairs, 0.0);
        for (std::size_t k = 0; k < pairs; ++k) {
            for (std::size_t i = lo; i < hi; ++i) {
                mean_a[k] += block_sets[i].sums[k];
                mean_b[k] += block_sets[i].sums[k + gap];
            }
            mean_a[k] /= m;
            mean_b[k] /= m;
        }
        std::vector<double> per_seed(hi - lo, 0.0);
        for (std::size_t i = lo; i < hi; ++i) {
            KahanSum acc;
            for (std::size_t k = 0; k < pairs; ++k)
                acc.add((block_sets[i].sums[k] - mean_a[k]) *
                        (block_sets[i].sums[k + gap] - mean_b[k]));
            per_seed[i - lo] = acc.value() / static_cast<double>(pairs);
        }
        double cov = mean(per_seed) * m / (m - 1.0);
        se_out = standard_error(per_seed) * m / (m - 1.0);
        return cov;
    };

    BlockReport report;
    report.block_size = b;
    report.beta_nominal = beta_nominal;
    const std::size_t half = n_seeds / 2;
    std::vector<double> cov_se;
    for (std::size_t gap = 1; gap < k_blocks; ++gap) {
        double se_fit = 0.0, se_holdout = 0.0;
        report.gaps.push_back(static_cast<double>(gap));
        report.cov.push_back(std::abs(half_cov(0, half, gap, se_fit)));
        report.cov_holdout.push_back(std::abs(half_cov(half, n_seeds, gap, se_holdout)));
        cov_se.push_back(se_fit);
    }

    std::vector<double> ft, fv;
    for (std::size_t i = 0; i < report.gaps.size(); ++i) {
        if (!fit_window.contains(report.gaps[i])) continue;
        if (report.cov[i] < 1e-15) continue;
        ft.push_back(report.gaps[i]);
        fv.push_back(report.cov[i]);
    }
    report.fit = rates::fit_power_law(ft, fv, rates::Window{});

    // Envelope constant from the fit half: smallest C with
    // C b^2 m^-beta >= cov(m) + 4 SE(m); the sampling slack keeps the
    // held-out comparison from being a coin flip at the binding gap.
    double c_env = 0.0;
    const double b2 = static_cast<double>(b) * static_cast<double>(b);
    for (std::size_t i = 0; i < report.gaps.size(); ++i) {
        if (!fit_window.contains(report.gaps[i])) continue;
        double target = report.cov[i] + 4.0 * cov_se[i];
        c_env = std::max(c_env, target * std::pow(report.gaps[i], beta_nominal) / b2);
    }
    report.envelope_c = c_env;
    report.envelope_dominates_holdout = true;
    for (std::size_t i = 0; i < report.gaps.size(); ++i) {
        if (!fit_window.contains(report.gaps[i])) continue;
        double env = c_env * b2 * std::pow(report.gaps[i], -beta_nominal);
        if (report.cov_holdout[i] > env) report.envelope_dominates_holdout = false;
    }
    return report;
}

CouplingPath couple(const chain::TransitionKernel& kernel, std::size_t x0, std::size_t y0,
                    std::size_t t_max, std::uint64_t seed) {
    const std::size_t n = kernel.n_states();
    if (x0 >= n || y0 >= n) throw InvalidParameter("coupling start state out of range");

    Rng rng = make_stream(seed, "coupling");
    CouplingPath path;
    path.unequal.reserve(t_max + 1);

    std::size_t x = x0, y = y0;
    path.met = x == y;
    path.meeting_time = path.met ? 0 : t_max + 1;
    path.unequal.push_back(x != y ? 1 : 0);

    for (std::size_t t = 1; t <= t_max; ++t) {
        double u = rng.next_u01();
        if (x == y) {
            std::size_t s = kernel.step_from(x, u);
            x = s;
            y = s;
        } else {
            double overlap = 0.0;
            for (std::size_t s = 0; s < n; ++s) overlap += std::min(kernel.p(x, s), kernel.p(y, s));
            if (u < overlap) {
                // move together: inverse CDF over the overlap measure
                double acc = 0.0;
                std::size_t s = n - 1;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += std::min(kernel.p(x, j), kernel.p(y, j));
                    if (u < acc) {
                        s = j;
                        break;
                    }
                }
                x = s;
                y = s;
            } else {
                // residual moves, driven comonotonically by the same leftover uniform
                double v = (u - overlap) / (1.0 - overlap);
                double resid_x = 0.0, resid_y = 0.0;
                std::size_t nx = n - 1, ny = n - 1;
                bool found_x = false, found_y = false;
                for (std::size_t j = 0; j < n && !(found_x && found_y); ++j) {
                    double mn = std::min(kernel.p(x, j), kernel.p(y, j));
                    if (!found_x) {
                        resid_x += (kernel.p(x, j) - mn) / (1.0 - overlap);
                        if (v < resid_x) {
                            nx = j;
                            found_x = true;
                        }
                    }
                    if (!found_y) {
                        resid_y += (kernel.p(y, j) - mn) / (1.0 - overlap);
                        if (v < resid_y) {
                            ny = j;
                            found_y = true;
                        }
                    }
                }
                x = nx;
                y = ny;
            }
            if (x == y && !path.met) {
                path.met = true;
                path.meeting_time = t;
            }
        }
        path.unequal.push_back(x != y ? 1 : 0);
    }
    return path;
}

CouplingReport coupling_study(const chain::TransitionKernel& kernel, std::size_t x0,
                              std::size_t y0, std::size_t t_max, std::size_t n_seeds,
                              std::uint64_t base_seed, rates::Window fit_window) {
    CouplingReport report;
    report.n_seeds = n_seeds;
    std::vector<KahanSum> counts(t_max + 1);
    for (std::size_t i = 0; i < n_seeds; ++i) {
        std::uint64_t seed = base_seed ^ hash_tag("couple-seed");
        seed ^= 0x9e3779b97f4a7c15ULL * (i + 1);
        auto path = couple(kernel, x0, y0, t_max, seed);
        for (std::size_t t = 0; t <= t_max; ++t) counts[t].add(path.unequal[t]);
    }
    report.p_unequal.resize(t_max + 1);
    for (std::size_t t = 0; t <= t_max; ++t)
        report.p_unequal[t] = counts[t].value() / static_cast<double>(n_seeds);

    // Exact lower bound: TV distance between the two time-t laws.
    std::vector<double> dx(kernel.n_states(), 0.0), dy(kernel.n_states(), 0.0);
    dx[x0] = 1.0;
    dy[y0] = 1.0;
    report.tv_lower.resize(t_max + 1);
    for (std::size_t t = 0;; ++t) {
        double tv = 0.0;
        for (std::size_t s = 0; s < kernel.n_states(); ++s) tv += std::abs(dx[s] - dy[s]);
        report.tv_lower[t] = 0.5 * tv;
        if (t == t_max) break;
        dx = left_multiply(dx, kernel.p());
        dy = left_multiply(dy, kernel.p());
    }

    std::vector<double> ft, fv;
    for (std::size_t t = 1; t <= t_max; ++t) {
        if (!fit_window.contains(static_cast<double>(t))) continue;
        if (report.p_unequal[t] <= 0.0) continue;
        ft.push_back(static_cast<double>(t));
        fv.push_back(report.p_unequal[t]);
    }
    report.fit = rates::fit_power_law(ft, fv, rates::Window{});
    return report;
}

ConcentrationReport concentration_tail(const chain::TransitionKernel& kernel,
                                       const std::vector<double>& functional, std::size_t n,
                                       const std::vector<double>& epsilons, std::size_t n_seeds,
                                       double beta_hat, std::uint64_t base_seed) {
    if (functional.size() != kernel.n_states())
        throw DimensionMismatch("functional must have one value per state");
    if (n_seeds < 1000) throw InsufficientSeeds("concentration study needs at least 1000 seeds");

    auto pi = chain::stationary_distribution(kernel);
    double target = 0.0, bound_m = 0.0;
    for (std::size_t s = 0; s < kernel.n_states(); ++s) {
        target += pi[s] * functional[s];
        bound_m = std::max(bound_m, std::abs(functional[s]));
    }

    auto block = static_cast<std::size_t>(
        std::lround(std::pow(static_cast<double>(n), 1.0 / (beta_hat + 1.0))));
    block = std::max<std::size_t>(block, 1);

    // Two independent batches: A calibrates C_beta, B is the held-out check.
    auto exceedances = [&](const char* tag, std::size_t count) {
        std::vector<double> exceed(epsilons.size(), 0.0);
        for (std::size_t i = 0; i < count; ++i) {
            std::uint64_t seed = base_seed ^ hash_tag(tag);
            seed ^= 0x9e3779b97f4a7c15ULL * (i + 1);
            auto traj = chain::sample_trajectory(kernel, chain::StartState::stationary(), n, seed);
            KahanSum acc;
            for (std::size_t t = 0; t < n; ++t) acc.add(functional[traj.states[t]]);
            double dev = std::abs(acc.value() / static_cast<double>(n) - target);
            for (std::size_t e = 0; e < epsilons.size(); ++e)
                if (dev > epsilons[e]) exceed[e] += 1.0;
        }
        for (double& v : exceed) v /= static_cast<double>(count);
        return exceed;
    };

    auto emp_a = exceedances("conc-cal", n_seeds);
    auto emp_b = exceedances("conc-holdout", n_seeds);

    // Smallest C_beta whose Bernstein-form bound covers every calibration
    // point including its binomial sampling slack (4 SE); without the slack
    // the binding epsilon would be a coin flip on the held-out batch.
    const auto nd = static_cast<double>(n);
    const auto bd = static_cast<double>(block);
    const auto seeds_d = static_cast<double>(n_seeds);
    double c_beta = 1e-12;
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
        if (emp_a[e] <= 0.0) continue;
        double eps = epsilons[e];
        double se = std::sqrt(emp_a[e] * (1.0 - emp_a[e]) / seeds_d) + 1.0 / seeds_d;
        double target = std::min(1.0, emp_a[e] + 4.0 * se);
        double log_term = std::log(2.0 / target);
        if (log_term <= 0.0) continue;
        // bound = 2 exp(-n eps^2 / (2C + (2/3) b M eps)) >= target
        double needed = (nd * eps * eps / log_term - (2.0 / 3.0) * bd * bound_m * eps) / 2.0;
        c_beta = std::max(c_beta, needed);
    }

    ConcentrationReport report;
    report.epsilons = epsilons;
    report.empirical = emp_b;
    report.c_beta = c_beta;
    report.block_size = block;
    report.n = n;
    report.bound.resize(epsilons.size());
    report.bound_dominates = true;
    for (std::size_t e = 0; e < epsilons.size(); ++e) {
        double eps = epsilons[e];
        double denom = 2.0 * c_beta + (2.0 / 3.0) * bd * bound_m * eps;
        report.bound[e] = std::min(1.0, 2.0 * std::exp(-nd * eps * eps / denom));
        if (emp_b[e] > report.bound[e]) report.bound_dominates = false;
    }
    return report;
}

}  // namespace tdmix::depend
