#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace tdmix {

/// Kahan compensated accumulator. Aggregations across seeds use this so that
/// results agree to ~1e-12 regardless of how work was split across threads
/// (per-seed terms are always reduced in seed order).
class KahanSum {
public:
    void add(double x) {
        double y = x - c_;
        double t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    [[nodiscard]] double value() const { return s_; }

private:
    double s_ = 0.0;
    double c_ = 0.0;
};

inline double kahan_total(std::span<const double> xs) {
    KahanSum acc;
    for (double x : xs) acc.add(x);
    return acc.value();
}

inline double mean(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    return kahan_total(xs) / static_cast<double>(xs.size());
}

inline double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    double m = mean(xs);
    KahanSum acc;
    for (double x : xs) acc.add((x - m) * (x - m));
    return acc.value() / static_cast<double>(xs.size() - 1);
}

/// Standard error of the mean.
inline double standard_error(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    return std::sqrt(sample_variance(xs) / static_cast<double>(xs.size()));
}

/// Order-statistic quantile (type 1): smallest x with F_hat(x) >= q.
inline double quantile(std::vector<double> xs, double q) {
    std::sort(xs.begin(), xs.end());
    if (xs.empty()) return 0.0;
    auto n = static_cast<double>(xs.size());
    auto idx = static_cast<std::size_t>(std::ceil(q * n));
    if (idx == 0) idx = 1;
    if (idx > xs.size()) idx = xs.size();
    return xs[idx - 1];
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    KahanSum acc;
    for (std::size_t i = 0; i < a.size(); ++i) acc.add(a[i] * b[i]);
    return acc.value();
}

inline double norm2(std::span<const double> a) {
    KahanSum acc;
    for (double x : a) acc.add(x * x);
    return std::sqrt(acc.value());
}

/// Dense row-major matrix. Small sizes only; heavy linear algebra is done by
/// mapping the storage into Eigen inside the .cpp files.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;  // row-major

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    [[nodiscard]] std::span<const double> row(std::size_t i) const {
        return {data.data() + i * cols, cols};
    }
};

/// y = x^T M (left multiplication by a row vector), used for distribution pushforward.
inline std::vector<double> left_multiply(std::span<const double> x, const Mat& m) {
    std::vector<double> y(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double xi = x[i];
        if (xi == 0.0) continue;
        const double* row = m.data.data() + i * m.cols;
        for (std::size_t j = 0; j < m.cols; ++j) y[j] += xi * row[j];
    }
    return y;
}

/// y = M x.
inline std::vector<double> multiply(const Mat& m, std::span<const double> x) {
    std::vector<double> y(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const double* row = m.data.data() + i * m.cols;
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) acc += row[j] * x[j];
        y[i] = acc;
    }
    return y;
}

}  // namespace tdmix
