#pragma once

#include <cstdint>
#include <vector>

#include "xret/numeric.hpp"

namespace xret {

// L x C grid of per-location feature vectors; row l is the feature at
// spatial location l (row-major over height x width).
using FeatureMap = Matrix;

// Binary indicator over the tag vocabulary.
class TagVector {
public:
    TagVector() = default;
    explicit TagVector(std::size_t size) : bits_(size, 0) {}
    // Throws InvalidArgument if any entry is not 0 or 1.
    explicit TagVector(std::vector<std::uint8_t> bits);

    static TagVector from_ids(std::size_t size, const std::vector<std::size_t>& active);

    std::size_t size() const noexcept { return bits_.size(); }
    bool test(std::size_t i) const noexcept { return bits_[i] != 0; }
    void set(std::size_t i, bool on = true);
    std::vector<std::size_t> active() const;
    const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }

    bool operator==(const TagVector&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

struct TagAttentionParams {
    Matrix W;  // T x C tag embedding
};

struct ContextAttentionParams {
    Vec v;     // C
    Matrix U;  // L x C, one alignment row per spatial location
};

struct AttentionResult {
    Vec weights;  // L, softmax-normalized
    Vec pooled;   // C, sum_l weights_l * x_l
};

// Sum of the rows of W selected by the active tags.
Vec tag_embed(const TagVector& tags, const TagAttentionParams& params);

// Inner-product alignment of each location with the embedded tags.
AttentionResult tag_attend(const FeatureMap& x, const TagVector& tags, const TagAttentionParams& params);

// Linear alignment: score_l = v . o_l + U_l . ctx.
AttentionResult context_attend(const FeatureMap& o, std::span<const double> ctx,
                               const ContextAttentionParams& params);

struct TagAttentionGrads {
    Matrix x;  // L x C
    Matrix W;  // T x C
};

struct ContextAttentionGrads {
    Matrix o;  // L x C
    Vec ctx;   // C
    Vec v;     // C
    Matrix U;  // L x C
};

// Gradients of <grad_pooled, pooled> through weights and scores.
TagAttentionGrads tag_attend_backward(const FeatureMap& x, const TagVector& tags, const TagAttentionParams& params,
                                      std::span<const double> grad_pooled);

ContextAttentionGrads context_attend_backward(const FeatureMap& o, std::span<const double> ctx,
                                              const ContextAttentionParams& params,
                                              std::span<const double> grad_pooled);

}  // namespace xret
