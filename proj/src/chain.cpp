#include "tdmix/chain.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tdmix/errors.hpp"
#include "tdmix/rng.hpp"

namespace tdmix::chain {

namespace {

constexpr double kRowSumTol = 1e-12;

// Reachability over the positive-entry digraph.
std::vector<bool> reachable_from(const Mat& p, std::size_t src, bool transpose) {
    const std::size_t n = p.rows;
    std::vector<bool> seen(n, false);
    std::vector<std::size_t> stack{src};
    seen[src] = true;
    while (!stack.empty()) {
        std::size_t u = stack.back();
        stack.pop_back();
        for (std::size_t v = 0; v < n; ++v) {
            double w = transpose ? p(v, u) : p(u, v);
            if (w > 0.0 && !seen[v]) {
                seen[v] = true;
                stack.push_back(v);
            }
        }
    }
    return seen;
}

bool is_irreducible(const Mat& p) {
    auto fwd = reachable_from(p, 0, false);
    auto bwd = reachable_from(p, 0, true);
    for (std::size_t i = 0; i < p.rows; ++i)
        if (!fwd[i] || !bwd[i]) return false;
    return true;
}

// Period of an irreducible chain: gcd over edges (u,v) of depth[u] + 1 - depth[v],
// depths from a BFS rooted at state 0.
std::size_t chain_period(const Mat& p) {
    const std::size_t n = p.rows;
    std::vector<long> depth(n, -1);
    std::vector<std::size_t> queue{0};
    depth[0] = 0;
    for (std::size_t qi = 0; qi < queue.size(); ++qi) {
        std::size_t u = queue[qi];
        for (std::size_t v = 0; v < n; ++v) {
            if (p(u, v) > 0.0 && depth[v] < 0) {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    long g = 0;
    for (std::size_t u = 0; u < n; ++u)
        for (std::size_t v = 0; v < n; ++v)
            if (p(u, v) > 0.0) g = std::gcd(g, std::labs(depth[u] + 1 - depth[v]));
    return g == 0 ? 1 : static_cast<std::size_t>(g);
}

std::vector<double> power_iteration_stationary(const Mat& p, double tol, std::size_t max_iters) {
    const std::size_t n = p.rows;
    std::vector<double> dist(n, 1.0 / static_cast<double>(n));
    for (std::size_t it = 0; it < max_iters; ++it) {
        auto next = left_multiply(dist, p);
        double delta = 0.0;
        for (std::size_t i = 0; i < n; ++i) delta = std::max(delta, std::abs(next[i] - dist[i]));
        dist = std::move(next);
        if (delta < tol) break;
    }
    return dist;
}

double stationary_residual(const Mat& p, const std::vector<double>& pi) {
    auto pip = left_multiply(pi, p);
    double res = 0.0;
    for (std::size_t i = 0; i < pi.size(); ++i) res = std::max(res, std::abs(pip[i] - pi[i]));
    return res;
}

}  // namespace

TransitionKernel TransitionKernel::make(Mat p, std::vector<double> rewards, double r_max,
                                        std::string kind, bool allow_periodic) {
    if (p.rows == 0 || p.rows != p.cols)
        throw DimensionMismatch("transition matrix must be square and non-empty");
    if (rewards.size() != p.rows)
        throw DimensionMismatch("rewards length must equal n_states");
    if (!(r_max > 0.0)) throw InvalidParameter("r_max must be positive");

    for (std::size_t i = 0; i < p.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) {
            if (p(i, j) < 0.0) throw InvalidParameter("negative transition probability");
            sum += p(i, j);
        }
        if (std::abs(sum - 1.0) > kRowSumTol)
            throw InvalidParameter("row " + std::to_string(i) + " sums to " + std::to_string(sum));
        if (std::abs(rewards[i]) > r_max)
            throw InvalidParameter("reward " + std::to_string(i) + " exceeds r_max");
    }

    if (!is_irreducible(p))
        throw ReducibleChain("kernel is not irreducible (more than one recurrent class)");

    bool periodic = chain_period(p) > 1;
    if (periodic && !allow_periodic)
        throw PeriodicChain("kernel is periodic; pass allow_periodic for diagnostic use");

    TransitionKernel k;
    k.cdf_ = Mat(p.rows, p.cols);
    for (std::size_t i = 0; i < p.rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p.cols; ++j) {
            acc += p(i, j);
            k.cdf_(i, j) = acc;
        }
        k.cdf_(i, p.cols - 1) = 1.0;  // guard against round-off at the top
    }
    k.p_ = std::move(p);
    k.rewards_ = std::move(rewards);
    k.r_max_ = r_max;
    k.kind_ = std::move(kind);
    k.periodic_ = periodic;
    return k;
}

std::size_t TransitionKernel::step_from(std::size_t s, double u) const {
    const double* row = cdf_.data.data() + s * cdf_.cols;
    const double* it = std::upper_bound(row, row + cdf_.cols, u);
    std::size_t j = static_cast<std::size_t>(it - row);
    return j < cdf_.cols ? j : cdf_.cols - 1;
}

std::vector<double> stationary_distribution(const TransitionKernel& kernel) {
    const std::size_t n = kernel.n_states();
    const Mat& p = kernel.p();

    // Solve (P^T - I) pi = 0 with the last equation replaced by sum(pi) = 1.
    Eigen::MatrixXd a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) a(static_cast<long>(i), static_cast<long>(j)) = p(j, i);
    a -= Eigen::MatrixXd::Identity(static_cast<long>(n), static_cast<long>(n));
    for (std::size_t j = 0; j < n; ++j) a(static_cast<long>(n) - 1, static_cast<long>(j)) = 1.0;
    Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<long>(n));
    b(static_cast<long>(n) - 1) = 1.0;

    Eigen::VectorXd x = a.partialPivLu().solve(b);
    std::vector<double> pi(n);
    for (std::size_t i = 0; i < n; ++i) pi[i] = x(static_cast<long>(i));

    bool ok = stationary_residual(p, pi) <= 1e-10;
    for (double v : pi)
        if (!(v > 0.0) || !std::isfinite(v)) ok = false;

    if (!ok) {
        // Aperiodic irreducible chains always admit the power-iteration fallback.
        pi = power_iteration_stationary(p, 1e-14, 200000);
        if (stationary_residual(p, pi) > 1e-10)
            throw ReducibleChain("stationary distribution did not converge");
    }
    double total = kahan_total(pi);
    for (double& v : pi) v /= total;
    return pi;
}

double tv_to_stationary(const TransitionKernel& kernel, std::size_t start, std::size_t t) {
    auto curve = tv_decay_curve(kernel, start, t);
    return curve[t];
}

std::vector<double> tv_decay_curve(const TransitionKernel& kernel, std::size_t start,
                                   std::size_t t_max) {
    if (start >= kernel.n_states()) throw InvalidParameter("start state out of range");
    auto pi = stationary_distribution(kernel);
    std::vector<double> dist(kernel.n_states(), 0.0);
    dist[start] = 1.0;

    std::vector<double> out;
    out.reserve(t_max + 1);
    for (std::size_t t = 0;; ++t) {
        double tv = 0.0;
        for (std::size_t i = 0; i < dist.size(); ++i) tv += std::abs(dist[i] - pi[i]);
        out.push_back(0.5 * tv);
        if (t == t_max) break;
        dist = left_multiply(dist, kernel.p());
    }
    return out;
}

TransitionKernel make_renewal_chain(double kappa, std::size_t n_states,
                                    const std::function<double(std::size_t)>& reward_fn,
                                    double r_max) {
    if (!(kappa > 1.0)) throw InvalidParameter("kappa must exceed 1");
    if (n_states < 3) throw InvalidParameter("renewal chain needs at least 3 states");

    const double s = kappa + 1.0;
    // zeta-style tail sums by direct summation plus an Euler-Maclaurin correction;
    // the last state's entry is the full remaining tail, computed directly so it
    // stays positive even when it is far below the rounding scale of 1 - head.
    auto tail_sum = [s](std::size_t from) {  // sum_{j >= from} j^-s, from >= 1
        const std::size_t cut = from + 100000;
        KahanSum acc;
        for (std::size_t j = from; j < cut; ++j) acc.add(std::pow(static_cast<double>(j), -s));
        double jc = static_cast<double>(cut);
        acc.add(std::pow(jc, 1.0 - s) / (s - 1.0) + 0.5 * std::pow(jc, -s));
        return acc.value();
    };
    const double z = tail_sum(1);

    std::vector<double> jump(n_states, 0.0);
    for (std::size_t j = 0; j + 1 < n_states; ++j)
        jump[j] = std::pow(static_cast<double>(j + 1), -s) / z;
    jump[n_states - 1] = tail_sum(n_states) / z;  // fold the tail mass into the last state
    double total = kahan_total(jump);
    for (double& v : jump) v /= total;

    Mat p(n_states, n_states, 0.0);
    for (std::size_t j = 0; j < n_states; ++j) p(0, j) = jump[j];
    for (std::size_t i = 1; i < n_states; ++i) p(i, i - 1) = 1.0;

    std::vector<double> rewards(n_states);
    for (std::size_t i = 0; i < n_states; ++i) rewards[i] = reward_fn(i);

    return TransitionKernel::make(std::move(p), std::move(rewards), r_max, "renewal");
}

Trajectory sample_trajectory(const TransitionKernel& kernel, StartState start, std::size_t length,
                             std::uint64_t seed) {
    if (length < 1) throw InvalidParameter("trajectory length must be >= 1");

    Rng rng = make_stream(seed, "trajectory");
    std::size_t state;
    if (start.from_stationary) {
        auto pi = stationary_distribution(kernel);
        double u = rng.next_u01();
        double acc = 0.0;
        state = pi.size() - 1;
        for (std::size_t i = 0; i < pi.size(); ++i) {
            acc += pi[i];
            if (u < acc) {
                state = i;
                break;
            }
        }
    } else {
        if (start.index >= kernel.n_states()) throw InvalidParameter("start state out of range");
        state = start.index;
    }

    Trajectory traj;
    traj.seed = seed;
    traj.kernel_id = kernel.kind();
    traj.states.reserve(length + 1);
    traj.rewards.reserve(length);
    traj.states.push_back(static_cast<std::uint32_t>(state));
    for (std::size_t t = 0; t < length; ++t) {
        traj.rewards.push_back(kernel.reward(state));
        state = kernel.step_from(state, rng.next_u01());
        traj.states.push_back(static_cast<std::uint32_t>(state));
    }
    return traj;
}

DriftCertificate check_drift(const TransitionKernel& kernel, DriftCertificate cert) {
    const std::size_t n = kernel.n_states();
    if (cert.v.size() != n || cert.w.size() != n)
        throw DimensionMismatch("drift certificate V, W must have length n_states");
    auto pv = multiply(kernel.p(), cert.v);
    cert.holds.assign(n, false);
    for (std::size_t i = 0; i < n; ++i)
        cert.holds[i] = pv[i] <= cert.v[i] - cert.lambda * cert.w[i] + cert.b + 1e-12;
    return cert;
}

}  // namespace tdmix::chain
