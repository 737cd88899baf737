#include "tdmix/rates.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "tdmix/errors.hpp"

namespace tdmix::rates {

namespace {

struct OlsResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    std::size_t n = 0;
};

OlsResult ols(const std::vector<double>& xs, const std::vector<double>& ys) {
    const auto n = static_cast<double>(xs.size());
    KahanSum sx, sy;
    for (double x : xs) sx.add(x);
    for (double y : ys) sy.add(y);
    double mx = sx.value() / n;
    double my = sy.value() / n;
    KahanSum sxx, sxy, syy;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx.add((xs[i] - mx) * (xs[i] - mx));
        sxy.add((xs[i] - mx) * (ys[i] - my));
        syy.add((ys[i] - my) * (ys[i] - my));
    }
    OlsResult r;
    r.n = xs.size();
    r.slope = sxy.value() / sxx.value();
    r.intercept = my - r.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        double e = ys[i] - (r.intercept + r.slope * xs[i]);
        ss_res += e * e;
    }
    r.r_squared = syy.value() > 0.0 ? 1.0 - ss_res / syy.value() : 1.0;
    return r;
}

void window_logs(const std::vector<double>& ts, const std::vector<double>& ys, Window window,
                 bool log_t, std::vector<double>& xs, std::vector<double>& ls) {
    if (ts.size() != ys.size()) throw DimensionMismatch("series lengths differ");
    for (std::size_t i = 0; i < ts.size(); ++i) {
        if (!window.contains(ts[i])) continue;
        if (!(ys[i] > 0.0))
            throw NonPositiveValue("series value <= 0 inside the fit window at t = " +
                                   std::to_string(ts[i]));
        xs.push_back(log_t ? std::log(ts[i]) : ts[i]);
        ls.push_back(std::log(ys[i]));
    }
    if (xs.size() < 6) throw WindowTooSmall("need at least 6 points inside the fit window");
}

}  // namespace

PowerLawFit fit_power_law(const std::vector<double>& ts, const std::vector<double>& ys,
                          Window window) {
    std::vector<double> xs, ls;
    window_logs(ts, ys, window, true, xs, ls);
    OlsResult r = ols(xs, ls);
    PowerLawFit fit;
    fit.exponent = -r.slope;
    fit.log_intercept = r.intercept;
    fit.r_squared = r.r_squared;
    fit.n_points = r.n;
    fit.t_min = std::exp(*std::min_element(xs.begin(), xs.end()));
    fit.t_max = std::exp(*std::max_element(xs.begin(), xs.end()));
    return fit;
}

LogLinearFit fit_log_linear(const std::vector<double>& ts, const std::vector<double>& ys,
                            Window window) {
    std::vector<double> xs, ls;
    window_logs(ts, ys, window, false, xs, ls);
    OlsResult r = ols(xs, ls);
    LogLinearFit fit;
    fit.rate = -r.slope;
    fit.log_intercept = r.intercept;
    fit.r_squared = r.r_squared;
    fit.n_points = r.n;
    return fit;
}

std::string to_string(BoundVariant v) {
    switch (v) {
        case BoundVariant::LinearHp: return "linear-hp";
        case BoundVariant::NonlinearHp: return "nonlinear-hp";
        case BoundVariant::ReluAppendix: return "relu-appendix";
        case BoundVariant::MomentP: return "moment-p";
    }
    return "unknown";
}

namespace {

// The two basis functions of the envelope, evaluated at t.
std::pair<double, double> basis_at(const BoundSpec& spec, const td::StepSchedule& schedule,
                                   double t) {
    switch (spec.variant) {
        case BoundVariant::ReluAppendix:
            return {std::pow(t, -(spec.beta - 1.0) / 2.0), std::pow(t, -spec.eta * spec.beta)};
        case BoundVariant::MomentP: {
            double alpha = schedule.c_alpha * std::pow(t, -schedule.eta);
            return {std::pow(t, -spec.beta / 2.0),
                    std::pow(alpha, spec.holder_gamma / static_cast<double>(spec.p))};
        }
        case BoundVariant::LinearHp:
        case BoundVariant::NonlinearHp:
        default: {
            double alpha = schedule.c_alpha * std::pow(t, -schedule.eta);
            return {std::pow(t, -spec.beta / 2.0), std::pow(alpha, spec.holder_gamma)};
        }
    }
}

}  // namespace

std::vector<double> bound_curve(const BoundSpec& spec, const td::StepSchedule& schedule,
                                const std::vector<std::size_t>& ts) {
    std::vector<double> out;
    out.reserve(ts.size());
    for (std::size_t t : ts) {
        auto [b1, b2] = basis_at(spec, schedule, static_cast<double>(t));
        out.push_back(spec.c * b1 + spec.c_prime * b2);
    }
    return out;
}

double predicted_exponent(const BoundSpec& spec) {
    switch (spec.variant) {
        case BoundVariant::ReluAppendix:
            return std::min((spec.beta - 1.0) / 2.0, spec.eta * spec.beta);
        case BoundVariant::MomentP:
            return std::min(spec.beta / 2.0,
                            spec.eta * spec.holder_gamma / static_cast<double>(spec.p));
        case BoundVariant::LinearHp:
        case BoundVariant::NonlinearHp:
        default:
            return std::min(spec.beta / 2.0, spec.eta * spec.holder_gamma);
    }
}

QuantileCurve quantile_envelope(const std::vector<std::vector<double>>& err_curves,
                                const std::vector<std::size_t>& ts, double delta) {
    if (!(delta > 0.0) || !(delta < 1.0)) throw InvalidParameter("delta must lie in (0, 1)");
    const std::size_t n = err_curves.size();
    if (static_cast<double>(n) < 10.0 / delta)
        throw InsufficientSeeds("quantile at level " + std::to_string(1.0 - delta) +
                                " needs at least " + std::to_string(10.0 / delta) + " seeds");

    QuantileCurve out;
    out.delta = delta;
    out.ts = ts;
    out.q.resize(ts.size());
    out.ci_lo.resize(ts.size());
    out.ci_hi.resize(ts.size());

    std::vector<double> column(n);
    const double q_level = 1.0 - delta;
    for (std::size_t j = 0; j < ts.size(); ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            if (err_curves[i].size() != ts.size())
                throw DimensionMismatch("error curve length does not match checkpoint grid");
            column[i] = err_curves[i][j];
        }
        std::sort(column.begin(), column.end());
        auto nd = static_cast<double>(n);
        auto rank = static_cast<std::size_t>(std::ceil(q_level * nd));
        rank = std::clamp<std::size_t>(rank, 1, n);
        out.q[j] = column[rank - 1];

        // order-statistic CI via the normal approximation of Binomial(n, q_level)
        double half = 1.96 * std::sqrt(nd * q_level * (1.0 - q_level));
        auto lo_rank = static_cast<long>(std::floor(q_level * nd - half));
        auto hi_rank = static_cast<long>(std::ceil(q_level * nd + half));
        lo_rank = std::clamp<long>(lo_rank, 1, static_cast<long>(n));
        hi_rank = std::clamp<long>(hi_rank, 1, static_cast<long>(n));
        out.ci_lo[j] = column[static_cast<std::size_t>(lo_rank) - 1];
        out.ci_hi[j] = column[static_cast<std::size_t>(hi_rank) - 1];
    }
    return out;
}

BoundReport verify_bound(const std::vector<std::vector<double>>& err_curves,
                         const std::vector<std::size_t>& ts, BoundSpec spec,
                         const td::StepSchedule& schedule, Window fit_window,
                         double calibration_split) {
    const std::size_t n = err_curves.size();
    auto n_a = static_cast<std::size_t>(static_cast<double>(n) * calibration_split);
    if (n_a == 0 || n_a == n) throw InsufficientSeeds("both seed batches must be non-empty");

    std::vector<std::vector<double>> batch_a(err_curves.begin(),
                                             err_curves.begin() + static_cast<long>(n_a));
    std::vector<std::vector<double>> batch_b(err_curves.begin() + static_cast<long>(n_a),
                                             err_curves.end());

    auto qa = quantile_envelope(batch_a, ts, spec.delta);
    auto qb = quantile_envelope(batch_b, ts, spec.delta);

    // Nonnegative least squares of qa onto the two basis columns: solve the
    // 2x2 normal equations, clamping a negative coefficient to zero and
    // refitting the other.
    double b11 = 0, b12 = 0, b22 = 0, y1 = 0, y2 = 0;
    std::vector<double> f1(ts.size()), f2(ts.size());
    for (std::size_t j = 0; j < ts.size(); ++j) {
        auto [a, b] = basis_at(spec, schedule, static_cast<double>(ts[j]));
        f1[j] = a;
        f2[j] = b;
        b11 += a * a;
        b12 += a * b;
        b22 += b * b;
        y1 += a * qa.q[j];
        y2 += b * qa.q[j];
    }
    double det = b11 * b22 - b12 * b12;
    double c = 0.0, cp = 0.0;
    if (std::abs(det) > 1e-300) {
        c = (b22 * y1 - b12 * y2) / det;
        cp = (b11 * y2 - b12 * y1) / det;
    }
    if (c < 0.0) {
        c = 0.0;
        cp = b22 > 0.0 ? std::max(0.0, y2 / b22) : 0.0;
    } else if (cp < 0.0) {
        cp = 0.0;
        c = b11 > 0.0 ? std::max(0.0, y1 / b11) : 0.0;
    }

    BoundReport report;
    report.basis_majorizes = c > 0.0 || cp > 0.0;

    // Minimal uniform scale-up so the envelope dominates batch A including its
    // order-statistic sampling band; calibrating to the point estimate alone
    // would make held-out domination a coin flip at the touch point.
    double scale = 1.0;
    if (report.basis_majorizes) {
        for (std::size_t j = 0; j < ts.size(); ++j) {
            double env = c * f1[j] + cp * f2[j];
            if (env <= 0.0) {
                report.basis_majorizes = false;
                break;
            }
            scale = std::max(scale, qa.ci_hi[j] / env);
        }
    }
    c *= scale;
    cp *= scale;
    spec.c = c;
    spec.c_prime = cp;
    report.spec = spec;

    report.slack_min = std::numeric_limits<double>::infinity();
    report.domination = report.basis_majorizes;
    for (std::size_t j = 0; j < ts.size() && report.basis_majorizes; ++j) {
        double env = c * f1[j] + cp * f2[j];
        double slack = env - qb.q[j];
        report.slack_min = std::min(report.slack_min, slack);
        if (slack < 0.0) report.domination = false;
    }

    std::vector<double> td(ts.size());
    for (std::size_t j = 0; j < ts.size(); ++j) td[j] = static_cast<double>(ts[j]);
    auto fit = fit_power_law(td, qb.q, fit_window);
    report.quantile_exponent = fit.exponent;
    report.quantile_fit_r2 = fit.r_squared;
    report.predicted = predicted_exponent(spec);
    report.exponent_gap = report.quantile_exponent - report.predicted;
    return report;
}

}  // namespace tdmix::rates
