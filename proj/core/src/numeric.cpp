#include "xret/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "xret/errors.hpp"

namespace xret {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw DimensionMismatch("matrix data has " + std::to_string(data_.size()) + " values, expected " +
                                std::to_string(rows_ * cols_));
    }
}

Matrix Matrix::from_rows(const std::vector<Vec>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) throw DimensionMismatch("ragged rows in Matrix::from_rows");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

Matrix Matrix::identity(std::size_t rows, std::size_t cols) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < std::min(rows, cols); ++i) m(i, i) = 1.0;
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionMismatch("dot: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double squared_norm(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return s;
}

void axpy(double scale, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimensionMismatch("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += scale * x[i];
}

bool all_finite(std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

Vec column_mean(const Matrix& m) {
    Vec mean(m.cols(), 0.0);
    if (m.rows() == 0) return mean;
    for (std::size_t r = 0; r < m.rows(); ++r) axpy(1.0, m.row(r), mean);
    const double inv = 1.0 / static_cast<double>(m.rows());
    for (double& x : mean) x *= inv;
    return mean;
}

Vec softmax(std::span<const double> scores) {
    if (scores.empty()) throw InvalidArgument("softmax: empty input");
    if (!all_finite(scores)) throw InvalidArgument("softmax: non-finite score");

    const double max_score = *std::max_element(scores.begin(), scores.end());
    Vec out(scores.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out[i] = std::exp(scores[i] - max_score);
        sum += out[i];
    }
    for (double& w : out) w /= sum;
    return out;
}

Vec softmax_backward(std::span<const double> weights, std::span<const double> grad_weights) {
    const double inner = dot(weights, grad_weights);
    Vec out(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i) out[i] = weights[i] * (grad_weights[i] - inner);
    return out;
}

Vec l2_normalize(std::span<const double> v, double eps) {
    const double denom = std::max(std::sqrt(squared_norm(v)), eps);
    Vec out(v.begin(), v.end());
    for (double& x : out) x /= denom;
    return out;
}

Vec l2_normalize_backward(std::span<const double> input, std::span<const double> grad_output, double eps) {
    if (input.size() != grad_output.size()) throw DimensionMismatch("l2_normalize_backward: length mismatch");
    const double norm = std::sqrt(squared_norm(input));
    Vec out(grad_output.begin(), grad_output.end());
    if (norm < eps) {
        // Constant denominator below the guard.
        for (double& g : out) g /= eps;
        return out;
    }
    // d(v/|v|) = (I - y y^T) / |v|
    const double proj = dot(input, grad_output) / (norm * norm);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (grad_output[i] - proj * input[i]) / norm;
    return out;
}

Vec finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h) {
    if (!(h > 0.0)) throw InvalidArgument("finite_diff_grad: step must be positive");
    Vec probe(x.begin(), x.end());
    Vec grad(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + h;
        const double up = f(probe);
        probe[i] = orig - h;
        const double down = f(probe);
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NonFiniteValue("finite_diff_grad: non-finite function value at coordinate " + std::to_string(i), i);
        }
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

}  // namespace xret
