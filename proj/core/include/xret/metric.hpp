#pragma once

#include "xret/numeric.hpp"

namespace xret {

// Squared is the training/ranking default; Euclidean is kept for fidelity
// experiments. Both give the same ranking on unit vectors.
enum class DistanceKind { Squared, Euclidean };

double distance(std::span<const double> a, std::span<const double> b, DistanceKind kind = DistanceKind::Squared);

// Gradient of distance(a, b) with respect to a (the b-gradient is its negation).
// For Euclidean at a == b the zero subgradient is used.
Vec distance_grad(std::span<const double> a, std::span<const double> b, DistanceKind kind = DistanceKind::Squared);

// Anchor representations differ per candidate: o_p was attended against p,
// o_q against q. In the standard triplet loss o_p == o_q.
struct TripleEmbeddings {
    Vec o_p;
    Vec o_q;
    Vec p;
    Vec q;
};

inline constexpr double kDefaultMargin = 0.5;

// max(0, d(o_p, p) - d(o_q, q) + alpha)
double triplet_loss(const TripleEmbeddings& e, double alpha, DistanceKind kind = DistanceKind::Squared);

struct TripleGrads {
    Vec o_p;
    Vec o_q;
    Vec p;
    Vec q;
};

// Zero gradients when the hinge argument is <= 0 (the kink counts as inactive).
TripleGrads triplet_loss_backward(const TripleEmbeddings& e, double alpha,
                                  DistanceKind kind = DistanceKind::Squared);

}  // namespace xret
