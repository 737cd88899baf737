#include "tdmix/relu_diag.hpp"

#include <cmath>
#include <limits>

#include "tdmix/errors.hpp"
#include "tdmix/rng.hpp"

namespace tdmix::relu_diag {

std::size_t ActivationPattern::hamming(const ActivationPattern& other) const {
    std::size_t flips = 0;
    for (std::size_t l = 0; l < layers.size() && l < other.layers.size(); ++l)
        for (std::size_t i = 0; i < layers[l].size(); ++i)
            if (layers[l][i] != other.layers[l][i]) ++flips;
    return flips;
}

ActivationPattern activation_pattern(const approx::ReluNetwork& net,
                                     std::span<const double> input) {
    auto pre = net.preactivations(input);
    ActivationPattern pattern;
    // Hidden layers only; the affine output has no gate.
    for (std::size_t l = 0; l + 1 < pre.size(); ++l) {
        std::vector<bool> bits(pre[l].size());
        for (std::size_t i = 0; i < pre[l].size(); ++i) bits[i] = pre[l][i] > 0.0;
        pattern.layers.push_back(std::move(bits));
    }
    return pattern;
}

std::vector<std::vector<double>> make_probes(const approx::ReluNetwork& net, std::size_t count,
                                             std::uint64_t seed) {
    std::vector<std::vector<double>> probes;
    for (std::size_t s = 0; s < net.n_states() && probes.size() < count; ++s)
        probes.push_back(net.embed(s));

    Rng rng = make_stream(seed, "probes");
    const std::size_t dim = net.widths().front();
    while (probes.size() < count) {
        std::vector<double> x(dim);
        double norm_sq = 0.0;
        for (double& v : x) {
            v = rng.next_symmetric();
            norm_sq += v * v;
        }
        double norm = std::sqrt(norm_sq);
        if (norm == 0.0) continue;
        for (double& v : x) v *= net.x_max() / norm;
        probes.push_back(std::move(x));
    }
    return probes;
}

namespace {

// min over hidden units of |z| / |dz/dtheta| at one probe. dz/dtheta of the
// pre-activation of unit (l, i) touches layers 1..l; its squared norm is
// |backprop-to-layer-weights|^2 accumulated like a gradient, which equals the
// gradient of z rather than of the output. We reuse the network forward pass
// and do the per-unit backward locally.
double probe_boundary_distance(const approx::ReluNetwork& net, std::span<const double> input) {
    auto pre = net.preactivations(input);
    const bool with_bias = net.with_bias();
    const std::vector<double> input_vec(input.begin(), input.end());

    // forward activations per layer
    std::vector<std::vector<double>> post(pre.size());
    for (std::size_t l = 0; l < pre.size(); ++l) {
        post[l] = pre[l];
        if (l + 1 < pre.size())
            for (double& v : post[l]) v = v > 0.0 ? v : 0.0;
    }

    double best = std::numeric_limits<double>::infinity();
    for (std::size_t l = 0; l + 1 < pre.size(); ++l) {  // hidden layers
        for (std::size_t unit = 0; unit < pre[l].size(); ++unit) {
            double z = pre[l][unit];
            // |dz/dtheta|^2 over all parameters the pre-activation depends on:
            // dz/d(row `unit` of W_l) = [h_{l-1}; 1], plus backprop through
            // earlier layers.
            const std::vector<double>& h_prev = l == 0 ? input_vec : post[l - 1];
            double norm_sq = 0.0;
            for (double v : h_prev) norm_sq += v * v;
            if (with_bias) norm_sq += 1.0;

            if (l > 0) {
                std::vector<double> dh(h_prev.size(), 0.0);
                for (std::size_t c = 0; c < h_prev.size(); ++c) dh[c] = net.weight(l, unit, c);
                for (std::size_t li = l; li-- > 0;) {
                    std::size_t in_dim = net.layer_cols(li) - (with_bias ? 1 : 0);
                    const std::vector<double>& h_in = li == 0 ? input_vec : post[li - 1];
                    std::vector<double> dz(dh.size());
                    for (std::size_t r = 0; r < dh.size(); ++r)
                        dz[r] = pre[li][r] > 0.0 ? dh[r] : 0.0;
                    for (std::size_t r = 0; r < dz.size(); ++r) {
                        if (dz[r] == 0.0) continue;
                        for (std::size_t c = 0; c < in_dim; ++c) {
                            double g = dz[r] * h_in[c];
                            norm_sq += g * g;
                        }
                        if (with_bias) norm_sq += dz[r] * dz[r];
                    }
                    if (li == 0) break;
                    std::vector<double> dh_next(in_dim, 0.0);
                    for (std::size_t r = 0; r < dz.size(); ++r) {
                        if (dz[r] == 0.0) continue;
                        for (std::size_t c = 0; c < in_dim; ++c)
                            dh_next[c] += dz[r] * net.weight(li, r, c);
                    }
                    dh = std::move(dh_next);
                }
            }
            double denom = std::sqrt(norm_sq);
            double dist = denom > 0.0 ? std::abs(z) / denom : std::numeric_limits<double>::infinity();
            best = std::min(best, dist);
        }
    }
    return best;
}

}  // namespace

double min_boundary_distance(const approx::ReluNetwork& net,
                             const std::vector<std::vector<double>>& probes) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& probe : probes) best = std::min(best, probe_boundary_distance(net, probe));
    return best;
}

CrossingTracker::CrossingTracker(std::vector<std::vector<double>> probes, bool record_gamma_proxy)
    : probes_(std::move(probes)), record_gamma_proxy_(record_gamma_proxy) {}

void CrossingTracker::observe(std::size_t t, const approx::ValueModel& before,
                              const approx::ValueModel& after, double alpha) {
    const auto& net_before = std::get<approx::ReluNetwork>(before);
    const auto& net_after = std::get<approx::ReluNetwork>(after);

    std::size_t flips = 0;
    for (const auto& probe : probes_) {
        auto pat_before = activation_pattern(net_before, probe);
        auto pat_after = activation_pattern(net_after, probe);
        flips += pat_before.hamming(pat_after);
    }

    auto pb = net_before.params();
    auto pa = net_after.params();
    double disp_sq = 0.0;
    for (std::size_t i = 0; i < pb.size(); ++i) {
        double d = pa[i] - pb[i];
        disp_sq += d * d;
    }

    record_.ts.push_back(t);
    record_.kappa.push_back(flips);
    record_.displacement.push_back(std::sqrt(disp_sq));
    record_.alpha.push_back(alpha);
    record_.gamma_min_proxy.push_back(
        record_gamma_proxy_ ? min_boundary_distance(net_before, probes_) : 0.0);
    record_.total_crossings += flips;
    record_.cum_kappa.push_back(record_.total_crossings);
}

CrossingRecord track_crossings(const td::IterateHistory& history,
                               const chain::TransitionKernel& kernel,
                               const approx::ReluNetwork& net0,
                               const std::vector<std::vector<double>>& probes) {
    if (!history.has_stream || history.alphas.empty())
        throw MissingStepData("crossing replay needs the full per-step stream");
    (void)kernel;

    CrossingTracker tracker(probes);
    approx::ValueModel model = net0;
    std::vector<double> grad_buf(approx::param_dim(model), 0.0);
    for (std::size_t t = 1; t <= history.steps(); ++t) {
        approx::ValueModel before = model;
        td::td_step_inplace(model, history.trajectory.states[t - 1],
                            history.trajectory.rewards[t - 1], history.trajectory.states[t],
                            history.alphas[t - 1], history.discount, grad_buf,
                            static_cast<long>(t));
        tracker.observe(t, before, model, history.alphas[t - 1]);
    }
    return tracker.record();
}

}  // namespace tdmix::relu_diag
