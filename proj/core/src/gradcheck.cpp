#include "xret/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace xret {

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (double& x : m.flat()) x = dist(rng);
    return m;
}

TagVector random_tags(std::size_t n, std::mt19937_64& rng) {
    std::bernoulli_distribution coin(0.5);
    std::uniform_int_distribution<std::size_t> any(0, n - 1);
    TagVector t(n);
    for (std::size_t i = 0; i < n; ++i) t.set(i, coin(rng));
    if (t.active().empty()) t.set(any(rng));
    return t;
}

double min_abs_preactivation(const Model& m, const Matrix& raw) {
    double lo = INFINITY;
    for (std::size_t l = 0; l < raw.rows(); ++l) {
        for (double h : m.params.trunk.apply(raw.row(l))) lo = std::min(lo, std::abs(h));
    }
    return lo;
}

GradCheckCase check_one(const Model& model, const Matrix& o, const Matrix& p, const Matrix& q, const TagVector& pt,
                        const TagVector& qt, const GradCheckOptions& opts) {
    GradCheckCase c;
    c.config = model.config;
    const TripleInput in{o, p, q, pt, qt};

    // Pick a margin that keeps the hinge well inside its active region.
    const TripleForward f0 = forward_triple(in, model, 0.0);
    const double gap = distance(f0.embeddings.o_p, f0.embeddings.p) - distance(f0.embeddings.o_q, f0.embeddings.q);
    c.alpha = std::max(0.5, 0.5 - gap);

    const TripleBackward analytic = backward_triple(in, model, c.alpha);
    c.loss = analytic.loss;
    const Vec x0 = flatten(model.params);
    Model probe = model;
    const Vec numeric = finite_diff_grad(
        [&](std::span<const double> x) {
            unflatten(x, probe.params);
            return forward_triple(in, probe, c.alpha).loss;
        },
        x0, opts.step);

    const auto grads = tensors(analytic.grads);
    std::size_t offset = 0;
    for (const auto& t : grads) {
        for (std::size_t i = 0; i < t.values.size(); ++i) {
            const double a = t.values[i];
            const double n = numeric[offset + i];
            const double err = std::abs(a - n);
            bool ok;
            if (std::abs(a) < opts.small_grad) {
                ok = err < opts.abs_tol;
                c.max_abs_error = std::max(c.max_abs_error, err);
            } else {
                const double rel = err / std::max(std::abs(a), std::abs(n));
                ok = rel < opts.rel_tol;
                if (rel > c.max_rel_error) {
                    c.max_rel_error = rel;
                    c.worst_tensor = t.name;
                }
            }
            if (!ok) {
                c.passed = false;
                if (c.worst_tensor.empty()) c.worst_tensor = t.name;
            }
        }
        offset += t.values.size();
    }
    c.coordinates = offset;
    return c;
}

}  // namespace

GradCheckReport run_gradient_check(const GradCheckOptions& opts) {
    GradCheckReport report;
    std::mt19937_64 rng(opts.seed);
    auto pick = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, std::max(lo, hi))(rng);
    };

    for (std::size_t trial = 0; trial < opts.trials; ++trial) {
        ModelConfig cfg;
        cfg.locations = pick(2, opts.max_locations);
        cfg.channels = pick(2, opts.max_channels);
        cfg.tags = pick(1, opts.max_tags);
        cfg.raw_dim = pick(2, opts.max_raw_dim);
        cfg.variant = Variant::CtxYNet;

        Model full = init_model(cfg, rng());
        // Move every tensor off its structured initialization.
        std::uniform_real_distribution<double> jitter(-0.5, 0.5);
        for (auto& t : tensors(full.params)) {
            for (double& x : t.values) x += jitter(rng);
        }

        Matrix o, p, q;
        for (int attempt = 0;; ++attempt) {
            o = random_matrix(cfg.locations, cfg.raw_dim, rng);
            p = random_matrix(cfg.locations, cfg.raw_dim, rng);
            q = random_matrix(cfg.locations, cfg.raw_dim, rng);
            const double margin = std::min({min_abs_preactivation(full, o), min_abs_preactivation(full, p),
                                             min_abs_preactivation(full, q)});
            if (margin > 1e-3 || attempt > 100) break;
        }
        const TagVector pt = random_tags(cfg.tags, rng);
        const TagVector qt = random_tags(cfg.tags, rng);

        for (Variant v : {Variant::CtxYNet, Variant::TagYNet, Variant::YNet}) {
            const Model m = retarget(full, v, 0);
            GradCheckCase c = check_one(m, o, p, q, pt, qt, opts);
            report.passed = report.passed && c.passed;
            report.cases.push_back(std::move(c));
        }
    }
    return report;
}

}  // namespace xret
