#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tdmix/config.hpp"
#include "tdmix/decomp.hpp"

namespace tdmix::pipeline {

struct Context {
    config::ExperimentConfig cfg;
    std::filesystem::path out;
    std::size_t threads = 1;
};

/// Deterministic parallel map over seed indices: worker count never changes
/// results because outputs land in per-index slots and reductions happen in
/// index order afterwards.
void parallel_for_indices(std::size_t count, std::size_t threads,
                          const std::function<void(std::size_t)>& body);

// Each stage is a pure function of (config, prior artifacts in `out`); stages
// write their own artifact files and return their summary JSON.
nlohmann::json stage_simulate(const Context& ctx);
nlohmann::json stage_train(const Context& ctx);
nlohmann::json stage_decompose(const Context& ctx);
nlohmann::json stage_mixing(const Context& ctx);
nlohmann::json stage_couple(const Context& ctx);
nlohmann::json stage_blocks(const Context& ctx);
nlohmann::json stage_crossings(const Context& ctx);
nlohmann::json stage_rates(const Context& ctx);
nlohmann::json stage_report(const Context& ctx);

/// Runs the declared pipeline end to end and writes the manifest.
/// Returns the process exit code (0 ok, 4 if a report check failed).
int run_all(const Context& ctx);

/// manifest.json: config hash, library version, per-file checksums.
void write_manifest(const Context& ctx);

/// Per-seed TD error curves on the common checkpoint grid. Re-runs TD
/// deterministically; used by train/decompose/rates.
struct TrainResult {
    std::vector<std::size_t> ts;
    std::vector<std::vector<double>> err_curves;  // [seed][checkpoint]
    std::vector<double> final_errors;
    decomp::FixedPoint fixed_point;
    double e0_norm = 0.0;
};

[[nodiscard]] TrainResult train_ensemble(const Context& ctx);

/// Reference parameters for models without a closed-form fixed point: a long
/// run with a smaller step constant; the stationarity residual is reported.
[[nodiscard]] decomp::FixedPoint reference_fixed_point(const config::ExperimentConfig& cfg);

inline constexpr const char* kVersion = "tdmix 0.1.0";

}  // namespace tdmix::pipeline
