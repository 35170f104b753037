#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace xret {

using Vec = std::vector<double>;

// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix from_rows(const std::vector<Vec>& rows);
    static Matrix identity(std::size_t n) { return identity(n, n); }
    // Ones on the leading min(rows, cols) diagonal.
    static Matrix identity(std::size_t rows, std::size_t cols);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

    std::span<double> flat() noexcept { return data_; }
    std::span<const double> flat() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
// y += scale * x
void axpy(double scale, std::span<const double> x, std::span<double> y);
bool all_finite(std::span<const double> v);

// Column means of a matrix (uniform pooling over rows).
Vec column_mean(const Matrix& m);

// Numerically stable softmax (max-subtracted). Throws InvalidArgument on
// empty or non-finite input.
Vec softmax(std::span<const double> scores);

// Vector-Jacobian product of softmax: given weights w = softmax(s) and
// upstream dL/dw, returns dL/ds = w * (g - <w, g>).
Vec softmax_backward(std::span<const double> weights, std::span<const double> grad_weights);

inline constexpr double kNormEps = 1e-12;

// v / max(||v||, eps)
Vec l2_normalize(std::span<const double> v, double eps = kNormEps);

// Vector-Jacobian product of l2_normalize evaluated at `input`.
Vec l2_normalize_backward(std::span<const double> input, std::span<const double> grad_output,
                          double eps = kNormEps);

using ScalarFn = std::function<double(std::span<const double>)>;

// Central-difference gradient (f(x + h e_i) - f(x - h e_i)) / 2h.
// Throws NonFiniteValue carrying i when f returns NaN/Inf.
Vec finite_diff_grad(const ScalarFn& f, std::span<const double> x, double h = 1e-5);

}  // namespace xret
