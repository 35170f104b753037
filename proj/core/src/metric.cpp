#include "xret/metric.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "xret/errors.hpp"

namespace xret {

double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind) {
    if (a.size() != b.size()) {
        throw DimensionMismatch("distance: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return kind == DistanceKind::Squared ? s : std::sqrt(s);
}

Vec distance_grad(std::span<const double> a, std::span<const double> b, DistanceKind kind) {
    if (a.size() != b.size()) throw DimensionMismatch("distance_grad: length mismatch");
    Vec g(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = a[i] - b[i];
    if (kind == DistanceKind::Squared) {
        for (double& x : g) x *= 2.0;
        return g;
    }
    const double norm = std::sqrt(squared_norm(g));
    if (norm == 0.0) {
        std::fill(g.begin(), g.end(), 0.0);
        return g;
    }
    for (double& x : g) x /= norm;
    return g;
}

double triplet_loss(const TripleEmbeddings& e, double alpha, DistanceKind kind) {
    const double arg = distance(e.o_p, e.p, kind) - distance(e.o_q, e.q, kind) + alpha;
    // NaN propagates so divergence is visible to the caller.
    return arg > 0.0 || std::isnan(arg) ? arg : 0.0;
}

TripleGrads triplet_loss_backward(const TripleEmbeddings& e, double alpha, DistanceKind kind) {
    const double arg = distance(e.o_p, e.p, kind) - distance(e.o_q, e.q, kind) + alpha;
    TripleGrads g;
    if (arg <= 0.0) {
        g.o_p.assign(e.o_p.size(), 0.0);
        g.o_q.assign(e.o_q.size(), 0.0);
        g.p.assign(e.p.size(), 0.0);
        g.q.assign(e.q.size(), 0.0);
        return g;
    }
    g.o_p = distance_grad(e.o_p, e.p, kind);
    g.p = g.o_p;
    for (double& x : g.p) x = -x;
    // The negative pair enters with a minus sign.
    g.q = distance_grad(e.o_q, e.q, kind);
    g.o_q = g.q;
    for (double& x : g.o_q) x = -x;
    return g;
}

}  // namespace xret
