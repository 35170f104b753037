#pragma once

// Random instance generators and naive reference implementations used as
// oracles. Nothing here calls into the library's numeric kernels.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "xret/attention.hpp"
#include "xret/model.hpp"

namespace xret::testing {

inline Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Matrix m(rows, cols);
    for (double& x : m.flat()) x = d(rng);
    return m;
}

inline Vec random_vec(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> d(0.0, scale);
    Vec v(n);
    for (double& x : v) x = d(rng);
    return v;
}

inline Vec random_unit(std::size_t n, std::mt19937_64& rng) {
    Vec v = random_vec(n, rng);
    long double s = 0;
    for (double x : v) s += static_cast<long double>(x) * x;
    const double norm = static_cast<double>(std::sqrt(s));
    for (double& x : v) x /= norm;
    return v;
}

inline TagVector random_tags(std::size_t n, std::mt19937_64& rng, bool allow_empty = true) {
    std::bernoulli_distribution coin(0.5);
    TagVector t(n);
    for (std::size_t i = 0; i < n; ++i) t.set(i, coin(rng));
    if (!allow_empty && t.active().empty()) t.set(0);
    return t;
}

inline std::size_t uniform_size(std::size_t lo, std::size_t hi, std::mt19937_64& rng) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Softmax in extended precision with no stabilization trick beyond the
// range of long double.
inline std::vector<long double> naive_softmax(const std::vector<long double>& s) {
    std::vector<long double> e(s.size());
    long double sum = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        e[i] = std::exp(s[i]);
        sum += e[i];
    }
    for (auto& x : e) x /= sum;
    return e;
}

struct NaiveAttention {
    std::vector<double> weights;
    std::vector<double> pooled;
};

inline NaiveAttention naive_pool(const Matrix& x, const std::vector<long double>& scores) {
    const auto w = naive_softmax(scores);
    NaiveAttention r;
    r.weights.assign(w.begin(), w.end());
    r.pooled.assign(x.cols(), 0.0);
    for (std::size_t c = 0; c < x.cols(); ++c) {
        long double acc = 0;
        for (std::size_t l = 0; l < x.rows(); ++l) acc += w[l] * x(l, c);
        r.pooled[c] = static_cast<double>(acc);
    }
    return r;
}

// score_l = sum_c x_lc * sum_{i active} W_ic, as a double loop.
inline NaiveAttention naive_tag_attend(const Matrix& x, const TagVector& t, const Matrix& W) {
    std::vector<long double> scores(x.rows(), 0);
    for (std::size_t l = 0; l < x.rows(); ++l) {
        for (std::size_t c = 0; c < x.cols(); ++c) {
            long double e = 0;
            for (std::size_t i = 0; i < t.size(); ++i) {
                if (t.test(i)) e += W(i, c);
            }
            scores[l] += x(l, c) * e;
        }
    }
    return naive_pool(x, scores);
}

inline NaiveAttention naive_context_attend(const Matrix& o, const std::vector<double>& ctx, const std::vector<double>& v,
                                           const Matrix& U) {
    std::vector<long double> scores(o.rows(), 0);
    for (std::size_t l = 0; l < o.rows(); ++l) {
        for (std::size_t c = 0; c < o.cols(); ++c) scores[l] += static_cast<long double>(v[c]) * o(l, c);
        for (std::size_t c = 0; c < ctx.size(); ++c) scores[l] += static_cast<long double>(U(l, c)) * ctx[c];
    }
    return naive_pool(o, scores);
}

inline std::vector<double> naive_normalize(const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += static_cast<long double>(x) * x;
    const long double n = std::max(std::sqrt(s), 1e-12L);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(v[i] / n);
    return out;
}

// branch(relu(trunk(raw_l))) location by location with explicit loops.
inline Matrix naive_features(const Matrix& raw, const Affine& trunk, const Affine& branch) {
    const std::size_t C = branch.weight.rows();
    Matrix out(raw.rows(), C);
    for (std::size_t l = 0; l < raw.rows(); ++l) {
        std::vector<long double> h(trunk.weight.rows());
        for (std::size_t o = 0; o < h.size(); ++o) {
            long double acc = trunk.bias[o];
            for (std::size_t i = 0; i < raw.cols(); ++i) acc += trunk.weight(o, i) * raw(l, i);
            h[o] = acc > 0 ? acc : 0;
        }
        for (std::size_t o = 0; o < C; ++o) {
            long double acc = branch.bias[o];
            for (std::size_t i = 0; i < h.size(); ++i) acc += branch.weight(o, i) * h[i];
            out(l, o) = static_cast<double>(acc);
        }
    }
    return out;
}

inline std::vector<double> naive_column_mean(const Matrix& m) {
    std::vector<double> out(m.cols());
    for (std::size_t c = 0; c < m.cols(); ++c) {
        long double acc = 0;
        for (std::size_t l = 0; l < m.rows(); ++l) acc += m(l, c);
        out[c] = static_cast<double>(acc / m.rows());
    }
    return out;
}

inline double naive_sq_distance(const std::vector<double>& a, const std::vector<double>& b) {
    long double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (static_cast<long double>(a[i]) - b[i]) * (a[i] - b[i]);
    return static_cast<double>(s);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// Relative error with an absolute floor for tiny analytic gradients.
inline bool grad_close(double analytic, double numeric, double rel_tol, double abs_tol = 1e-7,
                       double small = 1e-6) {
    const double err = std::abs(analytic - numeric);
    if (std::abs(analytic) < small) return err < abs_tol;
    return err / std::max(std::abs(analytic), std::abs(numeric)) < rel_tol;
}

// Fresh, empty temp directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& name) {
        path_ = std::filesystem::temp_directory_path() /
                (name + "_" + std::to_string(std::random_device{}()) + "_" + std::to_string(counter()++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::string str(const std::string& leaf = {}) const { return leaf.empty() ? path_.string() : (path_ / leaf).string(); }

private:
    static int& counter() {
        static int c = 0;
        return c;
    }
    std::filesystem::path path_;
};

}  // namespace xret::testing
