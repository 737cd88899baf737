#pragma once

#include <cstdint>
#include <vector>

#include "tdmix/approx.hpp"
#include "tdmix/chain.hpp"
#include "tdmix/td.hpp"

namespace tdmix::relu_diag {

/// Hidden-unit on/off gates of a network at one input; one bit vector per
/// hidden layer. A bit is set iff the pre-activation is strictly positive
/// (zero counts as off, matching the subgradient convention).
struct ActivationPattern {
    std::vector<std::vector<bool>> layers;

    bool operator==(const ActivationPattern&) const = default;

    /// Number of (layer, unit) bits that differ.
    [[nodiscard]] std::size_t hamming(const ActivationPattern& other) const;
};

[[nodiscard]] ActivationPattern activation_pattern(const approx::ReluNetwork& net,
                                                   std::span<const double> input);

/// Per-step crossing diagnostics over a fixed probe set.
struct CrossingRecord {
    std::vector<std::size_t> ts;
    std::vector<std::size_t> kappa;        // bit flips summed over probes at step t
    std::vector<double> displacement;      // |theta_{t+1} - theta_t|
    std::vector<double> alpha;
    std::vector<double> gamma_min_proxy;   // pre-step min boundary distance over probes
    std::vector<std::size_t> cum_kappa;
    std::size_t total_crossings = 0;
};

/// Default probe set: the embeddings of every chain state, padded with random
/// unit-norm inputs (scaled to x_max) up to `count` probes.
[[nodiscard]] std::vector<std::vector<double>> make_probes(const approx::ReluNetwork& net,
                                                           std::size_t count, std::uint64_t seed);

/// Smallest parameter-space distance to an activation boundary over the given
/// probes: min over (probe, hidden unit) of |z| / |dz/dtheta|. An exactly-zero
/// pre-activation reports distance 0.
[[nodiscard]] double min_boundary_distance(const approx::ReluNetwork& net,
                                           const std::vector<std::vector<double>>& probes);

/// Streaming crossing tracker: attach `observer()` to a TD run; each step it
/// compares activation patterns before and after the update on every probe.
class CrossingTracker {
public:
    CrossingTracker(std::vector<std::vector<double>> probes, bool record_gamma_proxy = true);

    void observe(std::size_t t, const approx::ValueModel& before, const approx::ValueModel& after,
                 double alpha);

    [[nodiscard]] const CrossingRecord& record() const { return record_; }

    /// Adapter matching td::RunOptions::observer.
    [[nodiscard]] auto observer() {
        return [this](std::size_t t, const approx::ValueModel& before,
                      const approx::ValueModel& after, double alpha, double) {
            observe(t, before, after, alpha);
        };
    }

private:
    std::vector<std::vector<double>> probes_;
    bool record_gamma_proxy_;
    CrossingRecord record_;
};

/// Re-runs a recorded ReLU history step by step and tracks pattern changes on
/// the probes. The history must carry the full stream (per-step replay).
[[nodiscard]] CrossingRecord track_crossings(const td::IterateHistory& history,
                                             const chain::TransitionKernel& kernel,
                                             const approx::ReluNetwork& net0,
                                             const std::vector<std::vector<double>>& probes);

}  // namespace tdmix::relu_diag
