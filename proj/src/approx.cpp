#include "tdmix/approx.hpp"

#include <algorithm>
#include <cmath>

#include "tdmix/errors.hpp"
#include "tdmix/rng.hpp"

namespace tdmix::approx {

FeatureMap FeatureMap::tabular(std::size_t n_states) {
    FeatureMap f;
    f.phi = Mat(n_states, n_states, 0.0);
    for (std::size_t s = 0; s < n_states; ++s) f.phi(s, s) = 1.0;
    f.c_phi = 1.0;
    f.c_gamma = 2.0;  // indicator features: |phi(s)-phi(s')| = sqrt(2) for s != s'
    f.holder_gamma = 1.0;
    return f;
}

FeatureMap FeatureMap::random(std::size_t n_states, std::size_t d, std::uint64_t seed) {
    FeatureMap f;
    f.phi = Mat(n_states, d, 0.0);
    Rng rng = make_stream(seed, "features");
    for (std::size_t s = 0; s < n_states; ++s) {
        double norm_sq = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            double v = rng.next_symmetric();
            f.phi(s, j) = v;
            norm_sq += v * v;
        }
        double norm = std::sqrt(norm_sq);
        if (norm > 1.0)
            for (std::size_t j = 0; j < d; ++j) f.phi(s, j) /= norm;
    }
    f.c_phi = 1.0;
    f.c_gamma = 2.0;
    f.holder_gamma = 1.0;
    return f;
}

ReluNetwork::ReluNetwork(std::size_t n_states, Embedding embedding,
                         std::vector<std::size_t> widths, double spectral_budget, double x_max,
                         bool with_bias)
    : n_states_(n_states),
      embedding_(embedding),
      widths_(std::move(widths)),
      budget_(spectral_budget),
      x_max_(x_max),
      with_bias_(with_bias) {
    if (widths_.size() < 2) throw InvalidParameter("network needs at least input and output widths");
    if (widths_.back() != 1) throw InvalidParameter("output width must be 1 (scalar value)");
    if (!(budget_ > 0.0)) throw InvalidParameter("spectral budget must be positive");
    std::size_t expected_in = embedding_ == Embedding::OneHot ? n_states_ : 1;
    if (widths_.front() != expected_in)
        throw DimensionMismatch("input width does not match the embedding dimension");

    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        std::size_t rows = widths_[l + 1];
        std::size_t cols = widths_[l] + (with_bias_ ? 1 : 0);
        layer_rows_.push_back(rows);
        layer_cols_.push_back(cols);
        layer_offsets_.push_back(offset);
        offset += rows * cols;
    }
    weights_.assign(offset, 0.0);
    power_iter_warm_.resize(layer_rows_.size());
}

void ReluNetwork::init_random(std::uint64_t seed, double scale) {
    Rng rng = make_stream(seed, "relu-init");
    for (std::size_t l = 0; l < layer_count(); ++l) {
        auto rows = static_cast<double>(layer_rows_[l]);
        auto cols = static_cast<double>(layer_cols_[l]);
        // E sigma_1 of an iid U[-w,w] matrix is ~ w (sqrt(rows)+sqrt(cols)) / sqrt(3)
        double w = scale * budget_ * std::sqrt(3.0) / (std::sqrt(rows) + std::sqrt(cols));
        for (std::size_t i = 0; i < layer_rows_[l] * layer_cols_[l]; ++i)
            weights_[layer_offsets_[l] + i] = w * rng.next_symmetric();
    }
    project_spectral();
}

std::vector<double> ReluNetwork::embed(std::size_t state) const {
    if (state >= n_states_) throw InvalidParameter("state out of range");
    if (embedding_ == Embedding::OneHot) {
        std::vector<double> x(n_states_, 0.0);
        x[state] = x_max_;
        return x;
    }
    return {x_max_ * static_cast<double>(state) / static_cast<double>(n_states_)};
}

void ReluNetwork::forward(std::span<const double> input, std::vector<std::vector<double>>& pre,
                          std::vector<std::vector<double>>& post) const {
    pre.resize(layer_count());
    post.resize(layer_count());
    std::vector<double> h(input.begin(), input.end());
    for (std::size_t l = 0; l < layer_count(); ++l) {
        std::size_t rows = layer_rows_[l];
        std::size_t cols = layer_cols_[l];
        std::size_t in_dim = with_bias_ ? cols - 1 : cols;
        pre[l].assign(rows, 0.0);
        const double* base = weights_.data() + layer_offsets_[l];
        for (std::size_t r = 0; r < rows; ++r) {
            const double* wr = base + r * cols;
            double acc = with_bias_ ? wr[in_dim] : 0.0;
            for (std::size_t c = 0; c < in_dim; ++c) acc += wr[c] * h[c];
            pre[l][r] = acc;
        }
        bool is_output = l + 1 == layer_count();
        post[l] = pre[l];
        if (!is_output)
            for (double& v : post[l]) v = v > 0.0 ? v : 0.0;
        h = post[l];
    }
}

double ReluNetwork::value_at_input(std::span<const double> input) const {
    std::vector<std::vector<double>> pre, post;
    forward(input, pre, post);
    return post.back()[0];
}

double ReluNetwork::value(std::size_t state) const { return value_at_input(embed(state)); }

void ReluNetwork::grad_into(std::size_t state, std::span<double> out) const {
    if (out.size() != weights_.size()) throw DimensionMismatch("gradient buffer size mismatch");
    auto input = embed(state);
    std::vector<std::vector<double>> pre, post;
    forward(input, pre, post);

    // Backward pass; the gate at an exactly-zero pre-activation is closed.
    std::vector<double> dz{1.0};
    for (std::size_t li = layer_count(); li-- > 0;) {
        std::size_t rows = layer_rows_[li];
        std::size_t cols = layer_cols_[li];
        std::size_t in_dim = with_bias_ ? cols - 1 : cols;
        const std::vector<double>& h_prev = li == 0 ? input : post[li - 1];

        double* gbase = out.data() + layer_offsets_[li];
        for (std::size_t r = 0; r < rows; ++r) {
            double g = dz[r];
            double* grow = gbase + r * cols;
            for (std::size_t c = 0; c < in_dim; ++c) grow[c] = g * h_prev[c];
            if (with_bias_) grow[in_dim] = g;
        }
        if (li == 0) break;

        std::vector<double> dh(in_dim, 0.0);
        const double* wbase = weights_.data() + layer_offsets_[li];
        for (std::size_t r = 0; r < rows; ++r) {
            double g = dz[r];
            const double* wr = wbase + r * cols;
            for (std::size_t c = 0; c < in_dim; ++c) dh[c] += g * wr[c];
        }
        dz.assign(in_dim, 0.0);
        for (std::size_t c = 0; c < in_dim; ++c) dz[c] = pre[li - 1][c] > 0.0 ? dh[c] : 0.0;
    }
}

std::vector<std::vector<double>> ReluNetwork::preactivations(std::span<const double> input) const {
    std::vector<std::vector<double>> pre, post;
    forward(input, pre, post);
    return pre;
}

double ReluNetwork::spectral_norm(std::size_t l) const {
    std::size_t rows = layer_rows_[l];
    std::size_t cols = layer_cols_[l];
    const double* base = weights_.data() + layer_offsets_[l];

    std::vector<double>& v = power_iter_warm_[l];
    if (v.size() != cols) {
        v.assign(cols, 1.0 / std::sqrt(static_cast<double>(cols)));
    }
    std::vector<double> u(rows, 0.0);
    double sigma = 0.0;
    int stable = 0;
    for (int it = 0; it < 500; ++it) {
        for (std::size_t r = 0; r < rows; ++r) {
            const double* wr = base + r * cols;
            double acc = 0.0;
            for (std::size_t c = 0; c < cols; ++c) acc += wr[c] * v[c];
            u[r] = acc;
        }
        double un = norm2(u);
        if (un == 0.0) return 0.0;
        for (double& x : u) x /= un;
        for (std::size_t c = 0; c < cols; ++c) {
            double acc = 0.0;
            for (std::size_t r = 0; r < rows; ++r) acc += base[r * cols + c] * u[r];
            v[c] = acc;
        }
        double vn = norm2(v);
        if (vn == 0.0) return 0.0;
        for (double& x : v) x /= vn;
        // the Rayleigh estimate approaches sigma_1 from below; require the
        // change to stay at rounding scale for a few iterations before trusting it
        stable = std::abs(vn - sigma) <= 1e-13 * std::max(1.0, vn) ? stable + 1 : 0;
        sigma = vn;
        if (stable >= 3) break;
    }
    return sigma;
}

void ReluNetwork::project_spectral() {
    for (std::size_t l = 0; l < layer_count(); ++l) {
        // The estimate is a lower bound on sigma_1, so a single rescale can
        // leave the layer marginally over budget; repeat until the estimate
        // itself certifies the budget. Warm-started vectors make the repeats
        // converge quickly.
        for (int round = 0; round < 64; ++round) {
            double sigma = spectral_norm(l);
            if (sigma <= budget_ * (1.0 + 1e-12)) break;
            double factor = budget_ / sigma;
            double* base = weights_.data() + layer_offsets_[l];
            std::size_t count = layer_rows_[l] * layer_cols_[l];
            for (std::size_t i = 0; i < count; ++i) base[i] *= factor;
        }
    }
}

GradConstants gradient_constants(std::size_t depth, double spectral_budget, double x_max,
                                 double r_max) {
    auto n = static_cast<double>(depth);
    GradConstants c;
    c.g = n * std::pow(spectral_budget, n) * (x_max + 1.0);
    c.g1 = 2.0 * c.g * (r_max + x_max);
    c.l = c.g1 * (1.0 + r_max);
    return c;
}

GradConstants gradient_constants(const ReluNetwork& net, double r_max) {
    return gradient_constants(net.depth(), net.spectral_budget(), net.x_max(), r_max);
}

double value(const ValueModel& model, std::size_t state) {
    if (const auto* lin = std::get_if<LinearModel>(&model))
        return dot(lin->features.row(state), lin->theta);
    return std::get<ReluNetwork>(model).value(state);
}

void grad_into(const ValueModel& model, std::size_t state, std::span<double> out) {
    if (const auto* lin = std::get_if<LinearModel>(&model)) {
        auto row = lin->features.row(state);
        std::copy(row.begin(), row.end(), out.begin());
        return;
    }
    std::get<ReluNetwork>(model).grad_into(state, out);
}

std::vector<double> grad(const ValueModel& model, std::size_t state) {
    std::vector<double> g(param_dim(model), 0.0);
    grad_into(model, state, g);
    return g;
}

std::size_t param_dim(const ValueModel& model) {
    if (const auto* lin = std::get_if<LinearModel>(&model)) return lin->theta.size();
    return std::get<ReluNetwork>(model).param_dim();
}

std::span<const double> params(const ValueModel& model) {
    if (const auto* lin = std::get_if<LinearModel>(&model)) return lin->theta;
    return std::get<ReluNetwork>(model).params();
}

std::span<double> params(ValueModel& model) {
    if (auto* lin = std::get_if<LinearModel>(&model)) return lin->theta;
    return std::get<ReluNetwork>(model).params();
}

ReluNetwork project_spectral(ReluNetwork net) {
    net.project_spectral();
    return net;
}

}  // namespace tdmix::approx
