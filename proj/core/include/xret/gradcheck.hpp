#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xret/model.hpp"

namespace xret {

struct GradCheckOptions {
    std::size_t trials = 20;
    std::uint64_t seed = 1;
    double step = 1e-5;
    double rel_tol = 1e-4;
    double abs_tol = 1e-7;    // used where |analytic| < small_grad
    double small_grad = 1e-6;
    std::size_t max_locations = 6;
    std::size_t max_channels = 5;
    std::size_t max_tags = 4;
    std::size_t max_raw_dim = 5;
};

struct GradCheckCase {
    ModelConfig config;
    double alpha = 0;
    double loss = 0;
    std::size_t coordinates = 0;
    double max_rel_error = 0;  // over coordinates judged by relative error
    double max_abs_error = 0;  // over coordinates judged by absolute error
    std::string worst_tensor;
    bool passed = true;
};

struct GradCheckReport {
    std::vector<GradCheckCase> cases;
    bool passed = true;
};

// For each trial draws a random small configuration and, for each of the
// three variants, compares backward_triple against central differences of
// forward_triple over every parameter. Inputs are drawn so the hinge is
// active and no ReLU pre-activation sits near its kink.
GradCheckReport run_gradient_check(const GradCheckOptions& opts);

}  // namespace xret
