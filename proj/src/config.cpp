#include "tdmix/config.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <set>

#include "tdmix/errors.hpp"
#include "tdmix/rng.hpp"

namespace tdmix::config {

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    return j.at(key).get<T>();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig cfg;
    if (j.contains("chain")) {
        const auto& c = j.at("chain");
        cfg.chain.kind = get_or<std::string>(c, "kind", cfg.chain.kind);
        cfg.chain.kappa = get_or<double>(c, "kappa", cfg.chain.kappa);
        cfg.chain.n_states = get_or<std::size_t>(c, "n_states", cfg.chain.n_states);
        cfg.chain.rewards = get_or<std::string>(c, "rewards", cfg.chain.rewards);
        cfg.chain.reward_values =
            get_or<std::vector<double>>(c, "reward_values", cfg.chain.reward_values);
        cfg.chain.r_max = get_or<double>(c, "r_max", cfg.chain.r_max);
        cfg.chain.p = get_or<std::vector<double>>(c, "p", cfg.chain.p);
        cfg.chain.stay = get_or<double>(c, "stay", cfg.chain.stay);
        cfg.chain.leave = get_or<double>(c, "leave", cfg.chain.leave);
    }
    if (j.contains("model")) {
        const auto& m = j.at("model");
        cfg.model.kind = get_or<std::string>(m, "kind", cfg.model.kind);
        cfg.model.features = get_or<std::string>(m, "features", cfg.model.features);
        cfg.model.d = get_or<std::size_t>(m, "d", cfg.model.d);
        cfg.model.hidden = get_or<std::vector<std::size_t>>(m, "hidden", cfg.model.hidden);
        cfg.model.spectral_budget = get_or<double>(m, "B", cfg.model.spectral_budget);
        cfg.model.x_max = get_or<double>(m, "x_max", cfg.model.x_max);
        cfg.model.embedding = get_or<std::string>(m, "embedding", cfg.model.embedding);
        cfg.model.with_bias = get_or<bool>(m, "with_bias", cfg.model.with_bias);
        cfg.model.init_scale = get_or<double>(m, "init_scale", cfg.model.init_scale);
        cfg.model.init_seed = get_or<std::uint64_t>(m, "init_seed", cfg.model.init_seed);
    }
    if (j.contains("schedule")) {
        cfg.c_alpha = get_or<double>(j.at("schedule"), "c_alpha", cfg.c_alpha);
        cfg.eta = get_or<double>(j.at("schedule"), "eta", cfg.eta);
    }
    cfg.discount = get_or<double>(j, "discount", cfg.discount);
    if (j.contains("run")) {
        const auto& r = j.at("run");
        cfg.run.t_total = get_or<std::size_t>(r, "T", cfg.run.t_total);
        cfg.run.seeds = get_or<std::vector<std::uint64_t>>(r, "seeds", cfg.run.seeds);
        cfg.run.base_seed = get_or<std::uint64_t>(r, "base_seed", cfg.run.base_seed);
        cfg.run.n_seeds = get_or<std::size_t>(r, "n_seeds", cfg.run.n_seeds);
        cfg.run.start = get_or<std::string>(r, "start", cfg.run.start);
        cfg.run.checkpoint_every = get_or<std::size_t>(r, "checkpoint_every", cfg.run.checkpoint_every);
        cfg.run.record_stream = get_or<bool>(r, "record_stream", cfg.run.record_stream);
        cfg.run.ref_t = get_or<std::size_t>(r, "ref_t", cfg.run.ref_t);
        cfg.run.ref_c_alpha_scale = get_or<double>(r, "ref_c_alpha_scale", cfg.run.ref_c_alpha_scale);
        cfg.run.ref_seed = get_or<std::uint64_t>(r, "ref_seed", cfg.run.ref_seed);
    }
    if (j.contains("diagnostics")) {
        const auto& d = j.at("diagnostics");
        cfg.diagnostics.decompose = get_or<bool>(d, "decompose", cfg.diagnostics.decompose);
        cfg.diagnostics.mixing = get_or<bool>(d, "mixing", cfg.diagnostics.mixing);
        cfg.diagnostics.blocks = get_or<bool>(d, "blocks", cfg.diagnostics.blocks);
        cfg.diagnostics.coupling = get_or<bool>(d, "coupling", cfg.diagnostics.coupling);
        cfg.diagnostics.crossings = get_or<bool>(d, "crossings", cfg.diagnostics.crossings);
        cfg.diagnostics.rates = get_or<bool>(d, "rates", cfg.diagnostics.rates);
        cfg.diagnostics.block_size = get_or<std::size_t>(d, "block_size", cfg.diagnostics.block_size);
        cfg.diagnostics.coupling_t_max =
            get_or<std::size_t>(d, "coupling_t_max", cfg.diagnostics.coupling_t_max);
        cfg.diagnostics.coupling_seeds =
            get_or<std::size_t>(d, "coupling_seeds", cfg.diagnostics.coupling_seeds);
        cfg.diagnostics.coupling_y0 = get_or<std::size_t>(d, "coupling_y0", cfg.diagnostics.coupling_y0);
        cfg.diagnostics.rate_variants =
            get_or<std::vector<std::string>>(d, "rate_variants", cfg.diagnostics.rate_variants);
        cfg.diagnostics.delta = get_or<double>(d, "delta", cfg.diagnostics.delta);
        cfg.diagnostics.beta_nominal = get_or<double>(d, "beta_nominal", cfg.diagnostics.beta_nominal);
        cfg.diagnostics.probe_count = get_or<std::size_t>(d, "probe_count", cfg.diagnostics.probe_count);
        cfg.diagnostics.exponent_tol = get_or<double>(d, "exponent_tol", cfg.diagnostics.exponent_tol);
        cfg.diagnostics.concentration = get_or<bool>(d, "concentration", cfg.diagnostics.concentration);
        cfg.diagnostics.conc_seeds = get_or<std::size_t>(d, "conc_seeds", cfg.diagnostics.conc_seeds);
        cfg.diagnostics.conc_ns =
            get_or<std::vector<std::size_t>>(d, "conc_ns", cfg.diagnostics.conc_ns);
        cfg.diagnostics.holder_gamma = get_or<double>(d, "holder_gamma", cfg.diagnostics.holder_gamma);
    }
    if (j.contains("fit")) {
        const auto& f = j.at("fit");
        cfg.fit.burn_in = get_or<double>(f, "burn_in", cfg.fit.burn_in);
        cfg.fit.mixing_t_min = get_or<double>(f, "mixing_t_min", cfg.fit.mixing_t_min);
        cfg.fit.mixing_t_max = get_or<double>(f, "mixing_t_max", cfg.fit.mixing_t_max);
    }
    cfg.out_dir = get_or<std::string>(j, "out", cfg.out_dir);
    return cfg;
}

json ExperimentConfig::to_json() const {
    json j;
    j["chain"] = {{"kind", chain.kind},       {"kappa", chain.kappa},
                  {"n_states", chain.n_states}, {"rewards", chain.rewards},
                  {"reward_values", chain.reward_values}, {"r_max", chain.r_max},
                  {"p", chain.p},             {"stay", chain.stay},
                  {"leave", chain.leave}};
    j["model"] = {{"kind", model.kind},
                  {"features", model.features},
                  {"d", model.d},
                  {"hidden", model.hidden},
                  {"B", model.spectral_budget},
                  {"x_max", model.x_max},
                  {"embedding", model.embedding},
                  {"with_bias", model.with_bias},
                  {"init_scale", model.init_scale},
                  {"init_seed", model.init_seed}};
    j["schedule"] = {{"c_alpha", c_alpha}, {"eta", eta}};
    j["discount"] = discount;
    j["run"] = {{"T", run.t_total},
                {"seeds", run.seeds},
                {"base_seed", run.base_seed},
                {"n_seeds", run.n_seeds},
                {"start", run.start},
                {"checkpoint_every", run.checkpoint_every},
                {"record_stream", run.record_stream},
                {"ref_t", run.ref_t},
                {"ref_c_alpha_scale", run.ref_c_alpha_scale},
                {"ref_seed", run.ref_seed}};
    j["diagnostics"] = {{"decompose", diagnostics.decompose},
                        {"mixing", diagnostics.mixing},
                        {"blocks", diagnostics.blocks},
                        {"coupling", diagnostics.coupling},
                        {"crossings", diagnostics.crossings},
                        {"rates", diagnostics.rates},
                        {"block_size", diagnostics.block_size},
                        {"coupling_t_max", diagnostics.coupling_t_max},
                        {"coupling_seeds", diagnostics.coupling_seeds},
                        {"coupling_y0", diagnostics.coupling_y0},
                        {"rate_variants", diagnostics.rate_variants},
                        {"delta", diagnostics.delta},
                        {"beta_nominal", diagnostics.beta_nominal},
                        {"probe_count", diagnostics.probe_count},
                        {"exponent_tol", diagnostics.exponent_tol},
                        {"concentration", diagnostics.concentration},
                        {"conc_seeds", diagnostics.conc_seeds},
                        {"conc_ns", diagnostics.conc_ns},
                        {"holder_gamma", diagnostics.holder_gamma}};
    j["fit"] = {{"burn_in", fit.burn_in},
                {"mixing_t_min", fit.mixing_t_min},
                {"mixing_t_max", fit.mixing_t_max}};
    j["out"] = out_dir;
    return j;
}

void ExperimentConfig::validate() const {
    if (!(eta > 0.5) || !(eta <= 1.0))
        throw ConfigError("schedule.eta", "must lie in (0.5, 1]");
    if (!(c_alpha > 0.0)) throw ConfigError("schedule.c_alpha", "must be positive");
    if (discount < 0.0 || discount >= 1.0)
        throw ConfigError("discount", "must lie in [0, 1)");
    if (run.t_total < 1) throw ConfigError("run.T", "must be >= 1");

    auto seeds = seed_list();
    std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
    if (unique.size() != seeds.size()) throw ConfigError("run.seeds", "seeds must be distinct");
    if (seeds.empty()) throw ConfigError("run.n_seeds", "at least one seed required");

    if (chain.kind == "renewal" && !(chain.kappa > 1.0))
        throw ConfigError("chain.kappa", "must exceed 1");
    if (chain.kind == "renewal" && chain.n_states < 3)
        throw ConfigError("chain.n_states", "renewal chain needs >= 3 states");
    if (chain.kind == "matrix" && chain.p.size() != chain.n_states * chain.n_states)
        throw ConfigError("chain.p", "row-major matrix must have n_states^2 entries");
    if (chain.kind == "two_state" && chain.n_states != 2)
        throw ConfigError("chain.n_states", "two_state chain has exactly 2 states");
    if (chain.rewards == "explicit" && chain.reward_values.size() != chain.n_states)
        throw ConfigError("chain.reward_values", "needs one entry per state");
    if (!(chain.r_max > 0.0)) throw ConfigError("chain.r_max", "must be positive");

    if (model.kind != "linear" && model.kind != "relu")
        throw ConfigError("model.kind", "must be linear or relu");
    if (model.kind == "linear" && model.features == "random" && model.d == 0)
        throw ConfigError("model.d", "random features need d >= 1");
    if (model.kind == "relu") {
        if (model.hidden.empty()) throw ConfigError("model.hidden", "needs at least one hidden width");
        if (!(model.spectral_budget > 0.0)) throw ConfigError("model.B", "must be positive");
        if (model.embedding != "onehot" && model.embedding != "coord")
            throw ConfigError("model.embedding", "must be onehot or coord");
    }
    if (run.start != "fixed0" && run.start != "stationary")
        throw ConfigError("run.start", "must be fixed0 or stationary");
    if (diagnostics.delta <= 0.0 || diagnostics.delta >= 1.0)
        throw ConfigError("diagnostics.delta", "must lie in (0, 1)");
    if (diagnostics.holder_gamma <= 0.0 || diagnostics.holder_gamma > 1.0)
        throw ConfigError("diagnostics.holder_gamma", "must lie in (0, 1]");
    for (const auto& v : diagnostics.rate_variants)
        if (v != "linear-hp" && v != "nonlinear-hp" && v != "relu-appendix" && v != "moment-p")
            throw ConfigError("diagnostics.rate_variants", "unknown variant " + v);
}

std::vector<std::uint64_t> ExperimentConfig::seed_list() const {
    if (!run.seeds.empty()) return run.seeds;
    std::vector<std::uint64_t> seeds(run.n_seeds);
    for (std::size_t i = 0; i < run.n_seeds; ++i) {
        std::uint64_t sm = run.base_seed ^ hash_tag("seed-list");
        sm ^= 0x9e3779b97f4a7c15ULL * (i + 1);
        seeds[i] = splitmix64(sm);
    }
    return seeds;
}

namespace {

double reward_preset(const std::string& preset, const std::vector<double>& values, std::size_t s,
                     std::size_t n, double r_max) {
    if (preset == "explicit") return values[s];
    if (preset == "ramp")
        return r_max * (2.0 * static_cast<double>(s) / static_cast<double>(n - 1) - 1.0);
    if (preset == "indicator0") return s == 0 ? r_max : 0.0;
    if (preset == "constant") return r_max;
    // alternating
    return (s % 2 == 0) ? r_max : -r_max;
}

}  // namespace

chain::TransitionKernel ExperimentConfig::build_kernel() const {
    const std::size_t n = chain.n_states;
    auto reward_fn = [&](std::size_t s) {
        return reward_preset(chain.rewards, chain.reward_values, s, n, chain.r_max);
    };
    if (chain.kind == "renewal")
        return chain::make_renewal_chain(chain.kappa, n, reward_fn, chain.r_max);
    if (chain.kind == "two_state") {
        Mat p(2, 2);
        p(0, 0) = chain.stay;
        p(0, 1) = 1.0 - chain.stay;
        p(1, 0) = chain.leave;
        p(1, 1) = 1.0 - chain.leave;
        std::vector<double> r = {reward_fn(0), reward_fn(1)};
        return chain::TransitionKernel::make(std::move(p), std::move(r), chain.r_max, "two_state");
    }
    if (chain.kind == "iid") {
        // every row equals the renewal jump row: consecutive states independent
        auto base = chain::make_renewal_chain(chain.kappa, n, reward_fn, chain.r_max);
        Mat p(n, n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) p(i, j) = base.p(0, j);
        std::vector<double> r(n);
        for (std::size_t s = 0; s < n; ++s) r[s] = reward_fn(s);
        return chain::TransitionKernel::make(std::move(p), std::move(r), chain.r_max, "iid");
    }
    Mat p(n, n);
    p.data = chain.p;
    std::vector<double> r(n);
    for (std::size_t s = 0; s < n; ++s) r[s] = reward_fn(s);
    return chain::TransitionKernel::make(std::move(p), std::move(r), chain.r_max, "matrix");
}

approx::ValueModel ExperimentConfig::build_model() const {
    if (model.kind == "linear") {
        approx::LinearModel lin;
        lin.features = model.features == "random"
                           ? approx::FeatureMap::random(chain.n_states, model.d, model.init_seed)
                           : approx::FeatureMap::tabular(chain.n_states);
        lin.theta.assign(lin.features.dim(), 0.0);
        return lin;
    }
    approx::Embedding emb =
        model.embedding == "onehot" ? approx::Embedding::OneHot : approx::Embedding::Coord;
    std::vector<std::size_t> widths;
    widths.push_back(emb == approx::Embedding::OneHot ? chain.n_states : 1);
    for (std::size_t h : model.hidden) widths.push_back(h);
    widths.push_back(1);
    approx::ReluNetwork net(chain.n_states, emb, widths, model.spectral_budget, model.x_max,
                            model.with_bias);
    net.init_random(model.init_seed, model.init_scale);
    return net;
}

td::StepSchedule ExperimentConfig::build_schedule() const { return {c_alpha, eta}; }

chain::StartState ExperimentConfig::build_start() const {
    return run.start == "stationary" ? chain::StartState::stationary()
                                     : chain::StartState::fixed(0);
}

rates::Window ExperimentConfig::mixing_window() const {
    double t_max = fit.mixing_t_max;
    if (t_max <= 0.0) t_max = static_cast<double>(chain.n_states) / 2.0;
    return {fit.mixing_t_min, t_max};
}

std::string config_hash(const ExperimentConfig& cfg) {
    std::string dump = cfg.to_json().dump();  // nlohmann objects iterate in sorted key order
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
    return buf;
}

}  // namespace tdmix::config
