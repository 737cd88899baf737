#include "tdmix/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include "tdmix/depend.hpp"
#include "tdmix/errors.hpp"
#include "tdmix/rates.hpp"
#include "tdmix/relu_diag.hpp"
#include "tdmix/serialize.hpp"

namespace tdmix::pipeline {

using nlohmann::json;
namespace fs = std::filesystem;

void parallel_for_indices(std::size_t count, std::size_t threads,
                          const std::function<void(std::size_t)>& body) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) body(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    std::exception_ptr first_error;
    std::mutex error_mutex;
    for (std::size_t w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    body(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mutex);
                    if (!first_error) first_error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
}

decomp::FixedPoint reference_fixed_point(const config::ExperimentConfig& cfg) {
    auto kernel = cfg.build_kernel();
    auto model = cfg.build_model();
    std::size_t t_ref = cfg.run.ref_t;
    if (t_ref == 0) t_ref = std::min<std::size_t>(10 * cfg.run.t_total, 10000000);
    td::StepSchedule ref_schedule(cfg.c_alpha * cfg.run.ref_c_alpha_scale, cfg.eta);

    td::RunOptions opts;
    opts.start = cfg.build_start();
    opts.record_stream = false;
    auto history = td::run_td(kernel, model, ref_schedule, cfg.discount, t_ref, cfg.run.ref_seed,
                              opts);

    decomp::FixedPoint fp;
    fp.theta_star = history.checkpoints.back().theta;
    fp.method = "long-run-average";
    approx::ValueModel at_star = model;
    auto p = approx::params(at_star);
    std::copy(fp.theta_star.begin(), fp.theta_star.end(), p.begin());
    auto field = decomp::expected_update(kernel, at_star, cfg.discount);
    fp.residual = norm2(field);
    return fp;
}

TrainResult train_ensemble(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto kernel = cfg.build_kernel();
    auto model0 = cfg.build_model();
    auto schedule = cfg.build_schedule();
    auto seeds = cfg.seed_list();

    TrainResult result;
    if (cfg.model.kind == "linear") {
        result.fixed_point = decomp::linear_fixed_point(
            kernel, std::get<approx::LinearModel>(model0).features, cfg.discount);
    } else {
        result.fixed_point = reference_fixed_point(cfg);
    }

    {
        auto p0 = approx::params(model0);
        double acc = 0.0;
        for (std::size_t i = 0; i < p0.size(); ++i) {
            double d = p0[i] - result.fixed_point.theta_star[i];
            acc += d * d;
        }
        result.e0_norm = std::sqrt(acc);
    }

    result.ts = cfg.run.checkpoint_every == 0
                    ? td::checkpoint_grid(cfg.run.t_total)
                    : std::vector<std::size_t>{};
    result.err_curves.resize(seeds.size());
    result.final_errors.resize(seeds.size());

    td::RunOptions opts;
    opts.start = cfg.build_start();
    opts.checkpoint_every = cfg.run.checkpoint_every;
    opts.record_stream = false;  // error curves only; streams are replayed on demand

    parallel_for_indices(seeds.size(), ctx.threads, [&](std::size_t i) {
        auto history =
            td::run_td(kernel, model0, schedule, cfg.discount, cfg.run.t_total, seeds[i], opts);
        result.err_curves[i] = td::error_curve(history, result.fixed_point.theta_star);
        result.final_errors[i] = result.err_curves[i].back();
        if (i == 0 && result.ts.empty()) {
            std::vector<std::size_t> ts;
            for (const auto& cp : history.checkpoints) ts.push_back(cp.t);
            result.ts = ts;
        }
    });
    if (result.ts.empty() && !result.err_curves.empty()) {
        // checkpoint_every > 0 path when seed 0 didn't fill ts (single-thread determinism)
        std::vector<std::size_t> ts;
        for (std::size_t t = cfg.run.checkpoint_every; t <= cfg.run.t_total;
             t += cfg.run.checkpoint_every)
            ts.push_back(t);
        if (ts.empty() || ts.back() != cfg.run.t_total) ts.push_back(cfg.run.t_total);
        result.ts = ts;
    }
    return result;
}

json stage_simulate(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto kernel = cfg.build_kernel();
    serialize::write_json(ctx.out / "kernel.json", serialize::kernel_to_json(kernel));

    // sample artifacts only; long runs keep one file, training regenerates
    // every trajectory deterministically from its seed
    auto seeds = cfg.seed_list();
    std::size_t n_write = std::min<std::size_t>(seeds.size(), cfg.run.t_total > 100000 ? 1 : 5);
    for (std::size_t i = 0; i < n_write; ++i) {
        auto traj =
            chain::sample_trajectory(kernel, cfg.build_start(), cfg.run.t_total, seeds[i]);
        serialize::write_trajectory_csv(
            ctx.out / ("trajectory_" + std::to_string(seeds[i]) + ".csv"), traj);
    }

    auto pi = chain::stationary_distribution(kernel);
    json j;
    j["stage"] = "simulate";
    j["n_states"] = kernel.n_states();
    j["stationary"] = pi;
    j["trajectories_written"] = n_write;
    serialize::write_json(ctx.out / "simulate.json", j);
    return j;
}

json stage_train(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto result = train_ensemble(ctx);
    auto seeds = cfg.seed_list();

    json fp;
    fp["theta_star"] = serialize::doubles_to_hex(result.fixed_point.theta_star);
    fp["residual"] = result.fixed_point.residual;
    fp["method"] = result.fixed_point.method;
    fp["e0_norm"] = result.e0_norm;
    serialize::write_json(ctx.out / "fixed_point.json", fp);

    // err_curves.csv: checkpoint grid in the first column, one column per seed
    std::vector<std::vector<double>> columns;
    std::vector<std::string> headers{"t"};
    std::vector<double> tcol(result.ts.size());
    for (std::size_t j = 0; j < result.ts.size(); ++j) tcol[j] = static_cast<double>(result.ts[j]);
    columns.push_back(tcol);
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        headers.push_back("err_seed" + std::to_string(seeds[i]));
        columns.push_back(result.err_curves[i]);
    }
    serialize::write_csv(ctx.out / "err_curves.csv", headers, columns);

    // full history samples for the first few seeds
    auto kernel = cfg.build_kernel();
    auto model0 = cfg.build_model();
    auto schedule = cfg.build_schedule();
    td::RunOptions opts;
    opts.start = cfg.build_start();
    opts.checkpoint_every = cfg.run.checkpoint_every;
    opts.record_stream = true;
    std::size_t n_sample = std::min<std::size_t>(seeds.size(), cfg.run.t_total > 100000 ? 1 : 3);
    for (std::size_t i = 0; i < n_sample; ++i) {
        auto history =
            td::run_td(kernel, model0, schedule, cfg.discount, cfg.run.t_total, seeds[i], opts);
        auto errs = td::error_curve(history, result.fixed_point.theta_star);
        serialize::write_history_csv(ctx.out / ("history_" + std::to_string(seeds[i]) + ".csv"),
                                     history, errs);
        serialize::write_checkpoints_json(
            ctx.out / ("checkpoints_" + std::to_string(seeds[i]) + ".json"), history);
    }

    std::vector<double> finals = result.final_errors;
    json j;
    j["stage"] = "train";
    j["n_seeds"] = seeds.size();
    j["T"] = cfg.run.t_total;
    j["e0_norm"] = result.e0_norm;
    j["fixed_point_residual"] = result.fixed_point.residual;
    j["fixed_point_method"] = result.fixed_point.method;
    j["final_err_median"] = quantile(finals, 0.5);
    j["final_err_q90"] = quantile(finals, 0.9);
    serialize::write_json(ctx.out / "train.json", j);
    return j;
}

json stage_decompose(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto fp_json = serialize::read_json(ctx.out / "fixed_point.json");
    auto theta_star = serialize::doubles_from_hex(fp_json.at("theta_star"));

    auto kernel = cfg.build_kernel();
    auto model0 = cfg.build_model();
    auto schedule = cfg.build_schedule();
    auto seeds = cfg.seed_list();

    td::RunOptions opts;
    opts.start = cfg.build_start();
    opts.checkpoint_every = cfg.run.checkpoint_every;
    opts.record_stream = true;

    // Per-seed decompositions are reduced immediately: retaining every
    // centered stream at T = 1e6 over hundreds of seeds would hold gigabytes.
    struct BinStat {
        double n = 0.0, sum = 0.0, sum_sq = 0.0;
    };
    const std::size_t n_decades = 7;
    const std::size_t n_bins = kernel.n_states() * n_decades;
    std::vector<std::vector<BinStat>> seed_bins(seeds.size(),
                                                std::vector<BinStat>(n_bins));
    std::vector<decomp::Decomposition> decomps(seeds.size());

    parallel_for_indices(seeds.size(), ctx.threads, [&](std::size_t i) {
        auto history =
            td::run_td(kernel, model0, schedule, cfg.discount, cfg.run.t_total, seeds[i], opts);
        auto d = decomp::decompose(history, kernel, model0, theta_star, true);
        for (std::size_t k = 0; k < d.centered_delta.size(); ++k) {
            auto decade = static_cast<std::size_t>(std::log10(static_cast<double>(k + 1)));
            decade = std::min(decade, n_decades - 1);
            auto& bin = seed_bins[i][d.centered_state[k] * n_decades + decade];
            bin.n += 1.0;
            bin.sum += d.centered_delta[k];
            bin.sum_sq += d.centered_delta[k] * d.centered_delta[k];
        }
        d.centered_delta.clear();
        d.centered_delta.shrink_to_fit();
        d.centered_state.clear();
        d.centered_state.shrink_to_fit();
        decomps[i] = std::move(d);
    });

    for (std::size_t i = 0; i < std::min<std::size_t>(seeds.size(), 5); ++i)
        serialize::write_decomposition_csv(
            ctx.out / ("decomp_" + std::to_string(seeds[i]) + ".csv"), decomps[i]);

    // For ReLU models the gap equals the accumulated spectral-projection
    // displacement (the two-term identity covers the unprojected dynamics);
    // for linear models any gap beyond rounding is a defect.
    double max_gap = 0.0;
    for (const auto& d : decomps)
        for (double g : d.reconstruction_gap) max_gap = std::max(max_gap, g);
    const bool projected_model = cfg.model.kind == "relu";

    // Conditional-mean bin test: centered TD errors binned by (state,
    // log-decade of t) pooled across seeds; each bin mean should sit within
    // 4 SE of zero.
    std::size_t bins_total = 0, bins_ok = 0;
    for (std::size_t b = 0; b < n_bins; ++b) {
        BinStat merged;
        for (std::size_t i = 0; i < seeds.size(); ++i) {
            merged.n += seed_bins[i][b].n;
            merged.sum += seed_bins[i][b].sum;
            merged.sum_sq += seed_bins[i][b].sum_sq;
        }
        if (merged.n < 30.0) continue;
        ++bins_total;
        double m = merged.sum / merged.n;
        double var = std::max(0.0, merged.sum_sq / merged.n - m * m);
        double se = std::sqrt(var / merged.n);
        if (se == 0.0 ? m == 0.0 : std::abs(m) <= 4.0 * se) ++bins_ok;
    }

    json aggregate;
    aggregate["stage"] = "decompose";
    aggregate["n_seeds"] = seeds.size();
    aggregate["max_reconstruction_gap"] = max_gap;
    aggregate["gap_is_projection_displacement"] = projected_model;
    aggregate["bins_total"] = bins_total;
    aggregate["bins_within_4se"] = bins_ok;
    aggregate["bin_fraction_ok"] =
        bins_total ? static_cast<double>(bins_ok) / static_cast<double>(bins_total) : 1.0;

    if (seeds.size() >= 30) {
        auto curve = decomp::martingale_variance_curve(decomps);
        aggregate["martingale_variance"] = {{"t", curve.ts},
                                            {"mean_sq", curve.mean_sq},
                                            {"ci_lo", curve.ci_lo},
                                            {"ci_hi", curve.ci_hi}};
        // Split-sample envelope: shape sum_{k<=t} alpha_k^2, constant fitted on
        // the first half of the checkpoints, validated on the second half.
        std::vector<double> shape(curve.ts.size());
        double acc = 0.0;
        std::size_t k = 1;
        for (std::size_t j = 0; j < curve.ts.size(); ++j) {
            while (k <= curve.ts[j]) {
                double a = schedule.at(k);
                acc += a * a;
                ++k;
            }
            shape[j] = acc;
        }
        double c_env = 0.0;
        std::size_t half = curve.ts.size() / 2;
        for (std::size_t j = 0; j < half; ++j)
            if (shape[j] > 0.0) c_env = std::max(c_env, curve.mean_sq[j] / shape[j]);
        bool dominates = true;
        for (std::size_t j = half; j < curve.ts.size(); ++j)
            if (curve.mean_sq[j] > c_env * shape[j]) dominates = false;
        aggregate["variance_envelope"] = {{"shape", "cum_alpha_sq"},
                                          {"c", c_env},
                                          {"dominates_second_half", dominates}};

        std::vector<std::vector<double>> err_curves;
        for (const auto& d : decomps) err_curves.push_back(d.err);
        for (int p : {2, 4}) {
            auto mc = decomp::moment_curve(err_curves, decomps.front().ts, p);
            aggregate["moment_p" + std::to_string(p)] = {{"t", mc.ts}, {"value", mc.value}};
        }

        // Remainder decay: fit |e0 + R_t| and compare against the two
        // candidate exponents gamma/2 and eta*gamma (no adjudication, both
        // reported with the winner by distance).
        const auto& ts0 = decomps.front().ts;
        std::vector<double> ft, fv;
        for (std::size_t j = 0; j < ts0.size(); ++j) {
            if (static_cast<double>(ts0[j]) < cfg.fit.burn_in) continue;
            KahanSum acc;
            for (const auto& d : decomps) acc.add(d.norm_e0_plus_r[j]);
            double v = acc.value() / static_cast<double>(decomps.size());
            if (v <= 0.0) continue;
            ft.push_back(static_cast<double>(ts0[j]));
            fv.push_back(v);
        }
        if (ft.size() >= 6) {
            auto rfit = rates::fit_power_law(ft, fv, rates::Window{});
            double holder_gamma = cfg.diagnostics.holder_gamma;
            double cand_half = holder_gamma / 2.0;
            double cand_eta = cfg.eta * holder_gamma;
            aggregate["remainder_fit"] = {
                {"exponent", rfit.exponent},
                {"r2", rfit.r_squared},
                {"candidate_gamma_half", cand_half},
                {"candidate_eta_gamma", cand_eta},
                {"closer_candidate", std::abs(rfit.exponent - cand_half) <=
                                             std::abs(rfit.exponent - cand_eta)
                                         ? "gamma/2"
                                         : "eta*gamma"}};
        }
    }
    serialize::write_json(ctx.out / "decomp.json", aggregate);
    return aggregate;
}

json stage_mixing(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto kernel = cfg.build_kernel();
    serialize::write_json(ctx.out / "kernel.json", serialize::kernel_to_json(kernel));

    // f = g = indicator of state 0: the renewal chain's slowest observable.
    std::vector<double> f(kernel.n_states(), 0.0);
    f[0] = 1.0;

    auto window = cfg.mixing_window();
    std::vector<std::size_t> lags;
    for (std::size_t lag = 1; lag <= static_cast<std::size_t>(window.t_max * 2.0); ++lag)
        lags.push_back(lag);
    auto est = depend::covariance_mixing(kernel, f, f, lags, window);

    // TV-decay fit from the default start state over the same window.
    auto tv = chain::tv_decay_curve(kernel, 0, static_cast<std::size_t>(window.t_max * 2.0));
    std::vector<double> ts, ys;
    for (std::size_t t = 1; t < tv.size(); ++t) {
        if (!window.contains(static_cast<double>(t))) continue;
        if (tv[t] < 1e-12) continue;
        ts.push_back(static_cast<double>(t));
        ys.push_back(tv[t]);
    }
    auto tv_fit = rates::fit_power_law(ts, ys, rates::Window{});
    auto tv_geo = rates::fit_log_linear(ts, ys, rates::Window{});

    serialize::write_csv(ctx.out / "mixing.csv", {"lag", "cov", "tv"},
                         {est.lags, est.values,
                          [&] {
                              std::vector<double> col;
                              for (double lag : est.lags)
                                  col.push_back(tv[static_cast<std::size_t>(lag)]);
                              return col;
                          }()});

    json j;
    j["stage"] = "mixing";
    j["window"] = {{"t_min", window.t_min}, {"t_max", window.t_max}};
    j["cov_fit"] = {{"exponent", est.fit.exponent},
                    {"intercept", est.fit.log_intercept},
                    {"r2", est.fit.r_squared},
                    {"n_points", est.fit.n_points}};
    j["cov_geometric_regime"] = est.geometric_regime;
    j["tv_fit"] = {{"exponent", tv_fit.exponent},
                   {"intercept", tv_fit.log_intercept},
                   {"r2", tv_fit.r_squared},
                   {"n_points", tv_fit.n_points}};
    j["tv_geometric_regime"] = tv_geo.r_squared > tv_fit.r_squared;
    j["beta_nominal"] = cfg.chain.kind == "renewal" ? cfg.chain.kappa - 1.0
                                                    : cfg.diagnostics.beta_nominal;
    serialize::write_json(ctx.out / "mixing.json", j);
    return j;
}

json stage_couple(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto kernel = cfg.build_kernel();

    std::size_t x0 = 0;
    std::size_t y0 = cfg.diagnostics.coupling_y0;
    if (y0 == 0 && kernel.n_states() > 1) y0 = kernel.n_states() - 1;
    auto window = cfg.mixing_window();
    auto report = depend::coupling_study(kernel, x0, y0, cfg.diagnostics.coupling_t_max,
                                         cfg.diagnostics.coupling_seeds, cfg.run.base_seed,
                                         window);

    std::vector<double> ts(report.p_unequal.size());
    for (std::size_t t = 0; t < ts.size(); ++t) ts[t] = static_cast<double>(t);
    serialize::write_csv(ctx.out / "coupling.csv", {"t", "p_unequal", "tv_lower"},
                         {ts, report.p_unequal, report.tv_lower});

    // Coupling inequality: P(x_t != y_t) >= TV lower bound, within 4 binomial SEs.
    bool lower_bound_ok = true;
    double n = static_cast<double>(report.n_seeds);
    for (std::size_t t = 0; t < report.p_unequal.size(); ++t) {
        double p = report.p_unequal[t];
        double se = std::sqrt(std::max(p * (1.0 - p), 1.0 / n) / n);
        if (p + 4.0 * se < report.tv_lower[t]) lower_bound_ok = false;
    }

    json j;
    j["stage"] = "couple";
    j["x0"] = x0;
    j["y0"] = y0;
    j["n_seeds"] = report.n_seeds;
    j["fit"] = {{"exponent", report.fit.exponent},
                {"intercept", report.fit.log_intercept},
                {"r2", report.fit.r_squared}};
    j["lower_bound_ok"] = lower_bound_ok;
    j["meeting_probability_end"] = 1.0 - report.p_unequal.back();
    serialize::write_json(ctx.out / "coupling.json", j);
    return j;
}

json stage_blocks(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto kernel = cfg.build_kernel();

    std::vector<double> f(kernel.n_states(), 0.0);
    f[0] = 1.0;

    auto seeds = cfg.seed_list();
    std::vector<depend::BlockSet> sets(seeds.size());
    parallel_for_indices(seeds.size(), ctx.threads, [&](std::size_t i) {
        auto traj = chain::sample_trajectory(kernel, chain::StartState::stationary(),
                                             cfg.run.t_total, seeds[i]);
        sets[i] = depend::make_blocks(traj, f, cfg.diagnostics.block_size);
    });

    rates::Window gap_window{1.0, static_cast<double>(sets.front().count()) / 2.0};
    auto report = depend::block_covariance_check(sets, cfg.diagnostics.beta_nominal, gap_window);

    std::vector<double> env(report.gaps.size());
    for (std::size_t i = 0; i < report.gaps.size(); ++i)
        env[i] = report.envelope_c * static_cast<double>(report.block_size) *
                 static_cast<double>(report.block_size) *
                 std::pow(report.gaps[i], -report.beta_nominal);
    serialize::write_csv(ctx.out / "blocks.csv", {"gap", "cov", "cov_holdout", "envelope"},
                         {report.gaps, report.cov, report.cov_holdout, env});

    json j;
    j["stage"] = "blocks";
    j["block_size"] = report.block_size;
    j["fit"] = {{"exponent", report.fit.exponent},
                {"intercept", report.fit.log_intercept},
                {"r2", report.fit.r_squared}};
    j["envelope_c"] = report.envelope_c;
    j["beta_nominal"] = report.beta_nominal;
    j["envelope_dominates_holdout"] = report.envelope_dominates_holdout;
    serialize::write_json(ctx.out / "blocks.json", j);

    if (cfg.diagnostics.concentration) {
        json studies = json::array();
        bool all_dominate = true;
        for (std::size_t n : cfg.diagnostics.conc_ns) {
            // epsilon grid spans the useful tail range of a mean of +-M values
            double m_bound = 0.0;
            for (double v : f) m_bound = std::max(m_bound, std::abs(v));
            std::vector<double> epsilons;
            double base = m_bound / std::sqrt(static_cast<double>(n));
            for (double mult : {1.0, 2.0, 4.0, 8.0, 16.0}) epsilons.push_back(base * mult);
            auto conc = depend::concentration_tail(kernel, f, n, epsilons,
                                                   cfg.diagnostics.conc_seeds,
                                                   cfg.diagnostics.beta_nominal,
                                                   cfg.run.base_seed);
            all_dominate = all_dominate && conc.bound_dominates;
            studies.push_back({{"n", n},
                               {"block_size", conc.block_size},
                               {"c_beta", conc.c_beta},
                               {"epsilons", conc.epsilons},
                               {"empirical", conc.empirical},
                               {"bound", conc.bound},
                               {"bound_dominates", conc.bound_dominates}});
        }
        json cj;
        cj["stage"] = "concentration";
        cj["studies"] = studies;
        cj["bound_dominates"] = all_dominate;
        serialize::write_json(ctx.out / "concentration.json", cj);
    }
    return j;
}

json stage_crossings(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    if (cfg.model.kind != "relu")
        throw ConfigError("model.kind", "crossings stage needs a relu model");
    auto kernel = cfg.build_kernel();
    auto model0 = cfg.build_model();
    const auto& net0 = std::get<approx::ReluNetwork>(model0);
    auto schedule = cfg.build_schedule();
    auto seeds = cfg.seed_list();

    auto probes = relu_diag::make_probes(net0, cfg.diagnostics.probe_count, cfg.run.base_seed);
    relu_diag::CrossingTracker tracker(probes, true);

    td::RunOptions opts;
    opts.start = cfg.build_start();
    opts.record_stream = false;
    opts.observer = tracker.observer();
    (void)td::run_td(kernel, model0, schedule, cfg.discount, cfg.run.t_total, seeds.front(), opts);

    const auto& rec = tracker.record();
    std::vector<double> ts(rec.ts.size()), kap(rec.ts.size()), cum(rec.ts.size());
    for (std::size_t i = 0; i < rec.ts.size(); ++i) {
        ts[i] = static_cast<double>(rec.ts[i]);
        kap[i] = static_cast<double>(rec.kappa[i]);
        cum[i] = static_cast<double>(rec.cum_kappa[i]);
    }
    serialize::write_csv(ctx.out / "crossings.csv",
                         {"t", "kappa_hat", "displacement", "alpha", "gamma_min_proxy",
                          "cum_kappa"},
                         {ts, kap, rec.displacement, rec.alpha, rec.gamma_min_proxy, cum});

    // plateau criterion: share of crossings in the last decade of steps
    std::size_t t_total = rec.ts.back();
    auto decade_start = static_cast<std::size_t>(static_cast<double>(t_total) / 10.0 * 9.0);
    std::size_t last_decade = 0;
    for (std::size_t i = 0; i < rec.ts.size(); ++i)
        if (rec.ts[i] > decade_start) last_decade += rec.kappa[i];

    json j;
    j["stage"] = "crossings";
    j["T"] = t_total;
    j["probes"] = probes.size();
    j["total_crossings"] = rec.total_crossings;
    j["last_decade_crossings"] = last_decade;
    j["last_decade_share"] = rec.total_crossings
                                 ? static_cast<double>(last_decade) /
                                       static_cast<double>(rec.total_crossings)
                                 : 0.0;
    serialize::write_json(ctx.out / "crossings.json", j);
    return j;
}

json stage_rates(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    auto schedule = cfg.build_schedule();

    // read err_curves.csv written by train
    auto text = serialize::read_text(ctx.out / "err_curves.csv");
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    std::vector<std::size_t> ts;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> row;
        while (std::getline(ls, cell, ',')) row.push_back(std::stod(cell));
        ts.push_back(static_cast<std::size_t>(row.front()));
        rows.push_back({row.begin() + 1, row.end()});
    }
    const std::size_t n_seeds = rows.empty() ? 0 : rows.front().size();
    std::vector<std::vector<double>> err_curves(n_seeds, std::vector<double>(ts.size()));
    for (std::size_t j = 0; j < ts.size(); ++j)
        for (std::size_t i = 0; i < n_seeds; ++i) err_curves[i][j] = rows[j][i];

    double beta = cfg.diagnostics.beta_nominal;
    double holder_gamma = cfg.diagnostics.holder_gamma;

    rates::Window fit_window{cfg.fit.burn_in, 0.0};
    json variants = json::array();
    rates::QuantileCurve quant;
    bool quant_ready = false;
    int exit_flag = 0;
    for (const auto& name : cfg.diagnostics.rate_variants) {
        rates::BoundSpec spec;
        spec.delta = cfg.diagnostics.delta;
        spec.beta = beta;
        spec.eta = cfg.eta;
        spec.holder_gamma = holder_gamma;
        if (name == "linear-hp") spec.variant = rates::BoundVariant::LinearHp;
        else if (name == "nonlinear-hp") spec.variant = rates::BoundVariant::NonlinearHp;
        else if (name == "relu-appendix") spec.variant = rates::BoundVariant::ReluAppendix;
        else spec.variant = rates::BoundVariant::MomentP;

        auto report = rates::verify_bound(err_curves, ts, spec, schedule, fit_window);
        if (!quant_ready) {
            quant = rates::quantile_envelope(err_curves, ts, spec.delta);
            quant_ready = true;
        }
        json v;
        v["variant"] = rates::to_string(spec.variant);
        v["fitted"] = {{"C", report.spec.c}, {"Cp", report.spec.c_prime}};
        v["quantile_exponent"] = report.quantile_exponent;
        v["quantile_fit_r2"] = report.quantile_fit_r2;
        v["predicted_exponent"] = report.predicted;
        v["exponent_gap"] = report.exponent_gap;
        v["domination"] = report.domination;
        v["slack_min"] = report.slack_min;
        v["basis_majorizes"] = report.basis_majorizes;
        variants.push_back(v);
        if (!report.domination) exit_flag = 1;

        // envelope SVG per variant
        std::vector<double> tsd(ts.size());
        for (std::size_t i = 0; i < ts.size(); ++i) tsd[i] = static_cast<double>(ts[i]);
        auto env = rates::bound_curve(report.spec, schedule, ts);
        serialize::write_loglog_svg(
            ctx.out / ("envelope_" + rates::to_string(spec.variant) + ".svg"),
            {{"quantile", tsd, quant.q, "#1f77b4"}, {"envelope", tsd, env, "#d62728"}},
            {report.predicted}, "error quantile vs fitted envelope");
    }

    if (quant_ready) {
        std::vector<double> tsd(ts.size());
        for (std::size_t i = 0; i < ts.size(); ++i) tsd[i] = static_cast<double>(ts[i]);
        serialize::write_csv(ctx.out / "quantile.csv", {"t", "quantile", "ci_lo", "ci_hi"},
                             {tsd, quant.q, quant.ci_lo, quant.ci_hi});
    }

    json j;
    j["stage"] = "rates";
    j["delta"] = cfg.diagnostics.delta;
    j["beta_nominal"] = beta;
    j["variants"] = variants;
    j["any_domination_failure"] = exit_flag != 0;
    serialize::write_json(ctx.out / "rates.json", j);
    return j;
}

namespace {

struct CheckLine {
    std::string name;
    std::string status;  // PASS / FAIL / NA
    std::string detail;
};

void add_check(std::vector<CheckLine>& lines, const std::string& name, bool ok,
               const std::string& detail) {
    lines.push_back({name, ok ? "PASS" : "FAIL", detail});
}

}  // namespace

json stage_report(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    std::vector<CheckLine> lines;
    json sources = json::object();

    auto try_read = [&](const char* file) -> std::optional<json> {
        fs::path p = ctx.out / file;
        if (!fs::exists(p)) return std::nullopt;
        auto j = serialize::read_json(p);
        sources[file] = j;
        return j;
    };

    bool any_input = false;
    if (auto train = try_read("train.json")) {
        any_input = true;
        std::ostringstream d;
        d << "final error median " << train->at("final_err_median").get<double>() << " ("
          << train->at("n_seeds").get<std::size_t>() << " seeds, T "
          << train->at("T").get<std::size_t>() << ", fixed point via "
          << train->at("fixed_point_method").get<std::string>() << ")";
        lines.push_back({"train-summary", "PASS", d.str()});
    }
    if (auto mixing = try_read("mixing.json")) {
        any_input = true;
        double beta_nom = mixing->at("beta_nominal").get<double>();
        double exp_fit = mixing->at("tv_fit").at("exponent").get<double>();
        double r2 = mixing->at("tv_fit").at("r2").get<double>();
        bool geo = mixing->at("tv_geometric_regime").get<bool>();
        std::ostringstream d;
        d << "tv exponent " << exp_fit << " vs nominal " << beta_nom << ", R2 " << r2
          << (geo ? " [geometric regime]" : "");
        bool ok = geo || (std::abs(exp_fit - beta_nom) <= 0.3 && r2 >= 0.98);
        add_check(lines, "ergodicity-decay", ok, d.str());

        double cexp = mixing->at("cov_fit").at("exponent").get<double>();
        bool cgeo = mixing->at("cov_geometric_regime").get<bool>();
        std::ostringstream d2;
        d2 << "covariance exponent " << cexp << (cgeo ? " [geometric regime]" : "");
        add_check(lines, "covariance-mixing", cgeo || cexp > 0.0, d2.str());
    } else {
        lines.push_back({"ergodicity-decay", "NA", "mixing stage not run"});
    }

    if (auto blocks = try_read("blocks.json")) {
        any_input = true;
        bool dom = blocks->at("envelope_dominates_holdout").get<bool>();
        double exp_fit = blocks->at("fit").at("exponent").get<double>();
        std::ostringstream d;
        d << "gap exponent " << exp_fit << ", envelope dominates holdout: " << (dom ? "yes" : "no");
        add_check(lines, "block-covariance", dom && exp_fit > 0.0, d.str());
    } else {
        lines.push_back({"block-covariance", "NA", "blocks stage not run"});
    }

    if (auto coupling = try_read("coupling.json")) {
        any_input = true;
        bool lb = coupling->at("lower_bound_ok").get<bool>();
        add_check(lines, "coupling-decay", lb,
                  "coupled mismatch dominates the exact TV lower bound: " +
                      std::string(lb ? "yes" : "no"));
    } else {
        lines.push_back({"coupling-decay", "NA", "couple stage not run"});
    }

    if (auto conc = try_read("concentration.json")) {
        any_input = true;
        bool dom = conc->at("bound_dominates").get<bool>();
        add_check(lines, "concentration-tail", dom,
                  "calibrated tail bound dominates held-out frequencies: " +
                      std::string(dom ? "yes" : "no"));
    } else {
        lines.push_back({"concentration-tail", "NA", "concentration stage not run"});
    }

    if (auto dec = try_read("decomp.json")) {
        any_input = true;
        double gap = dec->at("max_reconstruction_gap").get<double>();
        double frac = dec->at("bin_fraction_ok").get<double>();
        bool projected = dec->value("gap_is_projection_displacement", false);
        std::ostringstream d;
        if (projected)
            d << "projection displacement " << gap << " (identity gated on unprojected runs), ";
        else
            d << "max reconstruction gap " << gap << ", ";
        d << "bins within 4SE " << frac * 100.0 << "%";
        bool gap_ok = projected || gap <= 1e-10;
        add_check(lines, "martingale-structure", gap_ok && frac >= 0.95, d.str());
    } else {
        lines.push_back({"martingale-structure", "NA", "decompose stage not run"});
    }

    if (auto crossings = try_read("crossings.json")) {
        any_input = true;
        double share = crossings->at("last_decade_share").get<double>();
        std::ostringstream d;
        d << "last-decade crossing share " << share * 100.0 << "% of "
          << crossings->at("total_crossings").get<std::size_t>();
        add_check(lines, "region-crossings", share < 0.05, d.str());
    } else {
        lines.push_back({"region-crossings", "NA", "crossings stage not run"});
    }

    if (auto rj = try_read("rates.json")) {
        any_input = true;
        for (const auto& v : rj->at("variants")) {
            double gap = v.at("exponent_gap").get<double>();
            bool dom = v.at("domination").get<bool>();
            std::ostringstream d;
            d << "fitted " << v.at("quantile_exponent").get<double>() << " vs predicted "
              << v.at("predicted_exponent").get<double>() << " (gap " << gap
              << "), envelope domination " << (dom ? "yes" : "no");
            bool ok = std::abs(gap) <= cfg.diagnostics.exponent_tol && dom;
            add_check(lines, "rate-exponent-" + v.at("variant").get<std::string>(), ok, d.str());
        }
    } else {
        lines.push_back({"rate-exponent", "NA", "rates stage not run"});
    }

    if (!any_input) throw MissingArtifact("report: no stage artifacts found in " + ctx.out.string());

    std::ostringstream txt;
    txt << "verification report\n===================\n";
    bool all_ok = true;
    json checks = json::array();
    for (const auto& line : lines) {
        txt << '[' << line.status << "] " << line.name << " - " << line.detail << '\n';
        checks.push_back({{"name", line.name}, {"status", line.status}, {"detail", line.detail}});
        if (line.status == "FAIL") all_ok = false;
    }
    serialize::write_text(ctx.out / "report.txt", txt.str());

    json j;
    j["stage"] = "report";
    j["checks"] = checks;
    j["all_pass"] = all_ok;
    serialize::write_json(ctx.out / "report.json", j);
    return j;
}

void write_manifest(const Context& ctx) {
    json files = json::object();
    std::vector<fs::path> paths;
    for (const auto& entry : fs::directory_iterator(ctx.out)) {
        if (!entry.is_regular_file()) continue;
        if (entry.path().filename() == "manifest.json") continue;
        paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) files[p.filename().string()] = serialize::file_checksum(p);

    json j;
    j["config_hash"] = config::config_hash(ctx.cfg);
    j["version"] = kVersion;
    j["files"] = files;
    serialize::write_json(ctx.out / "manifest.json", j);
}

int run_all(const Context& ctx) {
    const auto& cfg = ctx.cfg;
    fs::create_directories(ctx.out);
    serialize::write_json(ctx.out / "config.json", cfg.to_json());

    stage_simulate(ctx);
    stage_train(ctx);
    if (cfg.diagnostics.decompose) stage_decompose(ctx);
    if (cfg.diagnostics.mixing) stage_mixing(ctx);
    if (cfg.diagnostics.blocks) stage_blocks(ctx);
    if (cfg.diagnostics.coupling) stage_couple(ctx);
    if (cfg.diagnostics.crossings && cfg.model.kind == "relu") stage_crossings(ctx);
    if (cfg.diagnostics.rates) stage_rates(ctx);
    auto report = stage_report(ctx);
    write_manifest(ctx);
    return report.at("all_pass").get<bool>() ? 0 : 4;
}

}  // namespace tdmix::pipeline
