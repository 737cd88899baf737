#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tdmix/stats.hpp"

namespace tdmix::approx {

/// Feature matrix for linear value models, one row per state, with the bound
/// and smoothness constants attached.
struct FeatureMap {
    Mat phi;                  // n_states x d
    double c_phi = 0.0;       // max_s |phi(s)|_2
    double c_gamma = 0.0;     // Holder constant of s -> phi(s)
    double holder_gamma = 1.0;

    [[nodiscard]] std::size_t n_states() const { return phi.rows; }
    [[nodiscard]] std::size_t dim() const { return phi.cols; }
    [[nodiscard]] std::span<const double> row(std::size_t s) const { return phi.row(s); }

    /// Identity features: one indicator per state.
    static FeatureMap tabular(std::size_t n_states);
    /// Random dense features with unit-capped row norms; deterministic in seed.
    static FeatureMap random(std::size_t n_states, std::size_t d, std::uint64_t seed);
};

struct LinearModel {
    FeatureMap features;
    std::vector<double> theta;  // length d
};

enum class Embedding { OneHot, Coord };

/// Fully connected ReLU network with a scalar output and a spectral budget B
/// on every layer. Hidden layers apply ReLU; the output layer is affine.
/// When `with_bias` is set each layer consumes [h; 1]. Weights live in one
/// contiguous buffer so the whole parameter vector can be updated in place.
class ReluNetwork {
public:
    ReluNetwork(std::size_t n_states, Embedding embedding, std::vector<std::size_t> widths,
                double spectral_budget, double x_max, bool with_bias = true);

    /// Uniform init in [-w, w] with w chosen so sigma_1 is near scale*B, then
    /// projected onto the budget so the bound holds from step 0.
    void init_random(std::uint64_t seed, double scale = 0.5);

    [[nodiscard]] std::size_t depth() const { return layer_rows_.size(); }
    [[nodiscard]] std::size_t n_states() const { return n_states_; }
    [[nodiscard]] double spectral_budget() const { return budget_; }
    [[nodiscard]] double x_max() const { return x_max_; }
    [[nodiscard]] bool with_bias() const { return with_bias_; }
    [[nodiscard]] Embedding embedding() const { return embedding_; }
    [[nodiscard]] const std::vector<std::size_t>& widths() const { return widths_; }

    [[nodiscard]] std::span<const double> params() const { return weights_; }
    [[nodiscard]] std::span<double> params() { return weights_; }
    [[nodiscard]] std::size_t param_dim() const { return weights_.size(); }

    [[nodiscard]] std::size_t layer_count() const { return layer_rows_.size(); }
    [[nodiscard]] std::size_t layer_rows(std::size_t l) const { return layer_rows_[l]; }
    [[nodiscard]] std::size_t layer_cols(std::size_t l) const { return layer_cols_[l]; }
    [[nodiscard]] std::size_t layer_offset(std::size_t l) const { return layer_offsets_[l]; }
    double& weight(std::size_t l, std::size_t r, std::size_t c) {
        return weights_[layer_offsets_[l] + r * layer_cols_[l] + c];
    }
    [[nodiscard]] double weight(std::size_t l, std::size_t r, std::size_t c) const {
        return weights_[layer_offsets_[l] + r * layer_cols_[l] + c];
    }

    /// State embedding with |x|_2 <= x_max.
    [[nodiscard]] std::vector<double> embed(std::size_t state) const;

    [[nodiscard]] double value(std::size_t state) const;
    [[nodiscard]] double value_at_input(std::span<const double> input) const;
    void grad_into(std::size_t state, std::span<double> out) const;

    /// Pre-activations of every hidden unit for a given input, layer by layer.
    [[nodiscard]] std::vector<std::vector<double>> preactivations(std::span<const double> input) const;

    /// Top singular value of layer l (power iteration, warm started).
    [[nodiscard]] double spectral_norm(std::size_t l) const;

    /// Rescales any layer whose top singular value exceeds the budget.
    void project_spectral();

private:
    void forward(std::span<const double> input, std::vector<std::vector<double>>& pre,
                 std::vector<std::vector<double>>& post) const;

    std::size_t n_states_ = 0;
    Embedding embedding_ = Embedding::OneHot;
    std::vector<std::size_t> widths_;  // input dim, hidden..., 1
    double budget_ = 1.0;
    double x_max_ = 1.0;
    bool with_bias_ = true;

    std::vector<double> weights_;
    std::vector<std::size_t> layer_rows_, layer_cols_, layer_offsets_;
    mutable std::vector<std::vector<double>> power_iter_warm_;
};

using ValueModel = std::variant<LinearModel, ReluNetwork>;

/// Closed-form gradient and smoothness constants of a budgeted ReLU network:
/// G = n B^n (X_max + 1), G1 = 2 G (R_max + X_max), L = G1 (1 + R_max).
struct GradConstants {
    double g = 0.0;
    double g1 = 0.0;
    double l = 0.0;
};

[[nodiscard]] GradConstants gradient_constants(const ReluNetwork& net, double r_max);
[[nodiscard]] GradConstants gradient_constants(std::size_t depth, double spectral_budget,
                                               double x_max, double r_max);

[[nodiscard]] double value(const ValueModel& model, std::size_t state);
void grad_into(const ValueModel& model, std::size_t state, std::span<double> out);
[[nodiscard]] std::vector<double> grad(const ValueModel& model, std::size_t state);

[[nodiscard]] std::size_t param_dim(const ValueModel& model);
[[nodiscard]] std::span<const double> params(const ValueModel& model);
[[nodiscard]] std::span<double> params(ValueModel& model);

/// Returns a copy of `net` with every over-budget layer rescaled.
[[nodiscard]] ReluNetwork project_spectral(ReluNetwork net);

}  // namespace tdmix::approx
