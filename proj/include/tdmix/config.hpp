#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tdmix/approx.hpp"
#include "tdmix/chain.hpp"
#include "tdmix/rates.hpp"
#include "tdmix/td.hpp"

namespace tdmix::config {

using nlohmann::json;

struct ChainSpec {
    std::string kind = "renewal";       // renewal | matrix | two_state | iid
    double kappa = 2.0;                 // renewal tail exponent
    std::size_t n_states = 10;
    std::string rewards = "alternating";  // alternating | ramp | indicator0 | constant | explicit
    std::vector<double> reward_values;    // for "explicit"
    double r_max = 1.0;
    std::vector<double> p;              // row-major, for "matrix"
    double stay = 0.9, leave = 0.2;     // for "two_state": P = [[stay,1-stay],[leave,1-leave]]
};

struct ModelSpec {
    std::string kind = "linear";        // linear | relu
    std::string features = "tabular";   // tabular | random
    std::size_t d = 0;                  // random feature dimension
    std::vector<std::size_t> hidden;    // relu hidden widths
    double spectral_budget = 1.5;
    double x_max = 1.0;
    std::string embedding = "coord";    // onehot | coord
    bool with_bias = true;
    double init_scale = 0.5;
    std::uint64_t init_seed = 7;
};

struct RunSpec {
    std::size_t t_total = 1000;
    std::vector<std::uint64_t> seeds;   // explicit list, or derived from base_seed
    std::uint64_t base_seed = 1;
    std::size_t n_seeds = 1;
    std::string start = "fixed0";       // fixed0 | stationary
    std::size_t checkpoint_every = 0;   // 0 = geometric grid
    bool record_stream = true;
    // Reference run for models without a closed-form fixed point.
    std::size_t ref_t = 0;              // 0 = min(10 T, 1e7)
    double ref_c_alpha_scale = 0.25;
    std::uint64_t ref_seed = 424242;
};

struct DiagnosticsSpec {
    bool decompose = false;
    bool mixing = false;
    bool blocks = false;
    bool coupling = false;
    bool crossings = false;
    bool rates = false;
    std::size_t block_size = 16;
    std::size_t coupling_t_max = 200;
    std::size_t coupling_seeds = 10000;
    std::size_t coupling_y0 = 0;        // x0 is the run start state
    std::vector<std::string> rate_variants = {"linear-hp"};
    double delta = 0.1;
    double beta_nominal = 1.0;          // fed to rate/bound checks
    std::size_t probe_count = 64;
    double exponent_tol = 0.15;         // report tolerance on fitted vs predicted exponents
    bool concentration = false;         // tail study, runs with the blocks stage
    std::size_t conc_seeds = 1000;
    std::vector<std::size_t> conc_ns = {1000, 10000};
    double holder_gamma = 1.0;          // smoothness exponent fed to the envelopes
};

struct FitSpec {
    double burn_in = 1000.0;            // fits exclude t < burn_in
    double mixing_t_min = 5.0;
    double mixing_t_max = 0.0;          // 0 = n_states / 2
};

/// Declarative experiment description; JSON-compatible, diffable, hashable.
struct ExperimentConfig {
    ChainSpec chain;
    ModelSpec model;
    double c_alpha = 1.0;
    double eta = 0.8;
    double discount = 0.9;
    RunSpec run;
    DiagnosticsSpec diagnostics;
    FitSpec fit;
    std::string out_dir = "out";

    [[nodiscard]] static ExperimentConfig from_json(const json& j);
    [[nodiscard]] json to_json() const;

    /// Validates ranges and cross-field constraints; throws ConfigError with
    /// the dotted field path on the first violation.
    void validate() const;

    [[nodiscard]] std::vector<std::uint64_t> seed_list() const;
    [[nodiscard]] chain::TransitionKernel build_kernel() const;
    [[nodiscard]] approx::ValueModel build_model() const;
    [[nodiscard]] td::StepSchedule build_schedule() const;
    [[nodiscard]] chain::StartState build_start() const;
    [[nodiscard]] rates::Window mixing_window() const;
};

/// Stable FNV-1a hash of the canonical (sorted-key) JSON dump.
[[nodiscard]] std::string config_hash(const ExperimentConfig& cfg);

}  // namespace tdmix::config
