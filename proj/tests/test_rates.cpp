#include <doctest.h>

#include <cmath>

#include "tdmix/errors.hpp"
#include "tdmix/rates.hpp"
#include "tdmix/rng.hpp"

using namespace tdmix;

namespace {

std::vector<double> ts_range(std::size_t lo, std::size_t hi) {
    std::vector<double> ts;
    for (std::size_t t = lo; t <= hi; ++t) ts.push_back(static_cast<double>(t));
    return ts;
}

}  // namespace

TEST_CASE("fit_power_law recovers noiseless power laws to machine precision") {
    auto ts = ts_range(1, 50);

    SUBCASE("y = t^-1") {
        std::vector<double> ys;
        for (double t : ts) ys.push_back(1.0 / t);
        auto fit = rates::fit_power_law(ts, ys, rates::Window{});
        CHECK(fit.exponent == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(fit.log_intercept == doctest::Approx(0.0).epsilon(1e-10));
    }

    SUBCASE("y = 3 t^-0.5") {
        std::vector<double> ys;
        for (double t : ts) ys.push_back(3.0 * std::pow(t, -0.5));
        auto fit = rates::fit_power_law(ts, ys, rates::Window{});
        CHECK(fit.exponent == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(fit.log_intercept == doctest::Approx(std::log(3.0)).epsilon(1e-12));
    }
}

TEST_CASE("fit_power_law with 1% noise stays within 3% of the true exponent") {
    auto ts = ts_range(10, 200);
    std::size_t good = 0;
    for (std::uint64_t rep = 0; rep < 100; ++rep) {
        Rng rng = make_stream(rep, "noise");
        std::vector<double> ys;
        for (double t : ts) ys.push_back((1.0 / t) * (1.0 + 0.01 * rng.next_symmetric()));
        auto fit = rates::fit_power_law(ts, ys, rates::Window{});
        if (fit.exponent >= 0.97 && fit.exponent <= 1.03) ++good;
    }
    CHECK(good == 100);
}

TEST_CASE("fit_power_law error paths") {
    auto ts = ts_range(1, 20);
    std::vector<double> ys(20, 1.0);
    ys[5] = 0.0;
    CHECK_THROWS_AS((void)rates::fit_power_law(ts, ys, rates::Window{}), NonPositiveValue);

    std::vector<double> short_ts = {1, 2, 3};
    std::vector<double> short_ys = {1.0, 0.5, 0.33};
    CHECK_THROWS_AS((void)rates::fit_power_law(short_ts, short_ys, rates::Window{}), WindowTooSmall);

    std::vector<double> ok(20, 1.0);
    CHECK_THROWS_AS((void)rates::fit_power_law(ts, ok, rates::Window{100.0, 200.0}), WindowTooSmall);
}

TEST_CASE("bound_curve evaluates the two-term envelope") {
    td::StepSchedule schedule(1.0, 1.0);

    SUBCASE("C' = 0 leaves a pure power law") {
        rates::BoundSpec spec;
        spec.variant = rates::BoundVariant::LinearHp;
        spec.c = 2.0;
        spec.c_prime = 0.0;
        spec.beta = 1.0;
        spec.holder_gamma = 1.0;
        auto curve = rates::bound_curve(spec, schedule, {1, 4, 16});
        CHECK(curve[0] == doctest::Approx(2.0));
        CHECK(curve[1] == doctest::Approx(1.0));
        CHECK(curve[2] == doctest::Approx(0.5));
    }

    SUBCASE("beta=eta=gamma=1, C=C'=1, t=4 gives 0.75") {
        rates::BoundSpec spec;
        spec.variant = rates::BoundVariant::LinearHp;
        spec.beta = 1.0;
        spec.eta = 1.0;
        spec.holder_gamma = 1.0;
        auto curve = rates::bound_curve(spec, schedule, {4});
        CHECK(curve[0] == doctest::Approx(0.75));
    }

    SUBCASE("envelope is monotone decreasing") {
        rates::BoundSpec spec;
        spec.variant = rates::BoundVariant::ReluAppendix;
        spec.beta = 1.5;
        spec.eta = 0.8;
        std::vector<std::size_t> ts;
        for (std::size_t t = 1; t <= 100; ++t) ts.push_back(t);
        auto curve = rates::bound_curve(spec, schedule, ts);
        for (std::size_t i = 1; i < curve.size(); ++i) CHECK(curve[i] <= curve[i - 1] + 1e-15);
    }

    SUBCASE("relu-appendix variant evaluates t^-(beta-1)/2 + t^-eta beta") {
        rates::BoundSpec spec;
        spec.variant = rates::BoundVariant::ReluAppendix;
        spec.beta = 2.0;
        spec.eta = 0.75;
        auto curve = rates::bound_curve(spec, schedule, {16});
        CHECK(curve[0] == doctest::Approx(std::pow(16.0, -0.5) + std::pow(16.0, -1.5)));
    }

    SUBCASE("moment-p variant applies the gamma/p power to the step size") {
        rates::BoundSpec spec;
        spec.variant = rates::BoundVariant::MomentP;
        spec.beta = 1.0;
        spec.eta = 0.8;
        spec.holder_gamma = 1.0;
        spec.p = 4;
        td::StepSchedule s(2.0, 0.8);
        auto curve = rates::bound_curve(spec, s, {16});
        double alpha = 2.0 * std::pow(16.0, -0.8);
        CHECK(curve[0] == doctest::Approx(std::pow(16.0, -0.5) + std::pow(alpha, 0.25)));
        CHECK(rates::predicted_exponent(spec) == doctest::Approx(std::min(0.5, 0.8 / 4.0)));
    }
}

TEST_CASE("predicted exponent picks the slower envelope term") {
    rates::BoundSpec spec;
    spec.variant = rates::BoundVariant::LinearHp;
    spec.beta = 1.5;
    spec.eta = 0.8;
    spec.holder_gamma = 1.0;
    CHECK(rates::predicted_exponent(spec) == doctest::Approx(0.75));
    spec.beta = 3.0;
    CHECK(rates::predicted_exponent(spec) == doctest::Approx(0.8));
    spec.variant = rates::BoundVariant::ReluAppendix;
    spec.beta = 1.5;
    CHECK(rates::predicted_exponent(spec) == doctest::Approx(0.25));
}

TEST_CASE("quantile envelope order statistics") {
    std::vector<std::size_t> ts = {1, 2};
    std::vector<std::vector<double>> curves;
    for (std::size_t i = 1; i <= 40; ++i)
        curves.push_back({static_cast<double>(i), static_cast<double>(i) * 2.0});

    SUBCASE("delta = 0.5 is the median") {
        auto q = rates::quantile_envelope(curves, ts, 0.5);
        CHECK(q.q[0] == doctest::Approx(20.0));
        CHECK(q.q[1] == doctest::Approx(40.0));
    }

    SUBCASE("identical histories collapse to the common curve") {
        std::vector<std::vector<double>> same(40, {3.0, 1.5});
        auto q = rates::quantile_envelope(same, ts, 0.25);
        CHECK(q.q[0] == doctest::Approx(3.0));
        CHECK(q.q[1] == doctest::Approx(1.5));
    }

    SUBCASE("quantile level is monotone in delta") {
        auto q10 = rates::quantile_envelope(curves, ts, 0.25);
        auto q50 = rates::quantile_envelope(curves, ts, 0.5);
        for (std::size_t j = 0; j < ts.size(); ++j) CHECK(q10.q[j] >= q50.q[j]);
    }

    SUBCASE("insufficient seeds") {
        std::vector<std::vector<double>> few(5, {1.0, 1.0});
        CHECK_THROWS_AS(rates::quantile_envelope(few, ts, 0.1), InsufficientSeeds);
    }
}

TEST_CASE("verify_bound on synthetic exact power-law histories") {
    // histories generated as c_i t^-0.75 with per-seed constants: domination
    // holds with small slack and the fitted exponent equals 0.75
    std::vector<std::size_t> ts;
    for (std::size_t t = 4; t <= 4096; t *= 2) ts.push_back(t);
    std::vector<std::vector<double>> curves;
    for (std::size_t i = 0; i < 240; ++i) {
        Rng rng = make_stream(i, "synthetic");
        double c = 0.5 + rng.next_u01();
        std::vector<double> curve;
        for (std::size_t t : ts) curve.push_back(c * std::pow(static_cast<double>(t), -0.75));
        curves.push_back(curve);
    }
    td::StepSchedule schedule(1.0, 0.8);
    rates::BoundSpec spec;
    spec.variant = rates::BoundVariant::LinearHp;
    spec.beta = 1.5;  // beta/2 = 0.75 dominates eta*gamma = 0.8
    spec.eta = 0.8;
    spec.holder_gamma = 1.0;
    spec.delta = 0.1;

    auto report = rates::verify_bound(curves, ts, spec, schedule, rates::Window{});
    CHECK(report.domination);
    CHECK(report.basis_majorizes);
    CHECK(report.quantile_exponent == doctest::Approx(0.75).epsilon(1e-6));
    CHECK(std::abs(report.exponent_gap) < 1e-6);
    CHECK(report.slack_min >= 0.0);
    CHECK(report.slack_min < 0.2);
}

TEST_CASE("verify_bound flags a fitted exponent faster than predicted") {
    // geometric decay: fitted power-law exponent over a window far exceeds the
    // polynomial prediction; the comparison surface reports the gap
    std::vector<std::size_t> ts;
    for (std::size_t t = 4; t <= 512; t *= 2) ts.push_back(t);
    std::vector<std::vector<double>> curves;
    for (std::size_t i = 0; i < 240; ++i) {
        std::vector<double> curve;
        for (std::size_t t : ts)
            curve.push_back((1.0 + 0.001 * static_cast<double>(i)) *
                            std::pow(0.99, static_cast<double>(t)));
        curves.push_back(curve);
    }
    td::StepSchedule schedule(1.0, 0.8);
    rates::BoundSpec spec;
    spec.variant = rates::BoundVariant::LinearHp;
    spec.beta = 1.0;
    spec.eta = 0.8;
    spec.holder_gamma = 1.0;
    spec.delta = 0.1;
    auto report = rates::verify_bound(curves, ts, spec, schedule, rates::Window{});
    CHECK(report.quantile_exponent > report.predicted);
}

TEST_CASE("log-linear fit identifies geometric decay") {
    auto ts = ts_range(1, 40);
    std::vector<double> ys;
    for (double t : ts) ys.push_back(5.0 * std::pow(0.8, t));
    auto fit = rates::fit_log_linear(ts, ys, rates::Window{});
    CHECK(std::exp(-fit.rate) == doctest::Approx(0.8).epsilon(1e-10));
    CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));
}
