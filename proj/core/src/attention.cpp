#include "xret/attention.hpp"

#include <string>

#include "xret/errors.hpp"

namespace xret {

namespace {

std::string dims(std::size_t r, std::size_t c) { return std::to_string(r) + "x" + std::to_string(c); }

void check_map(const FeatureMap& x, const char* op) {
    if (x.rows() == 0 || x.cols() == 0) throw DimensionMismatch(std::string(op) + ": empty feature map");
}

void check_tag_dims(const FeatureMap& x, const TagVector& tags, const TagAttentionParams& params, const char* op) {
    check_map(x, op);
    if (params.W.rows() != tags.size()) {
        throw DimensionMismatch(std::string(op) + ": tag vector has " + std::to_string(tags.size()) +
                                " entries but W is " + dims(params.W.rows(), params.W.cols()));
    }
    if (params.W.cols() != x.cols()) {
        throw DimensionMismatch(std::string(op) + ": feature map is " + dims(x.rows(), x.cols()) + " but W is " +
                                dims(params.W.rows(), params.W.cols()));
    }
}

void check_context_dims(const FeatureMap& o, std::span<const double> ctx, const ContextAttentionParams& params,
                        const char* op) {
    check_map(o, op);
    if (params.U.rows() != o.rows()) {
        throw DimensionMismatch(std::string(op) + ": feature map has " + std::to_string(o.rows()) +
                                " locations but U has " + std::to_string(params.U.rows()) + " rows");
    }
    if (params.U.cols() != ctx.size() || params.v.size() != o.cols()) {
        throw DimensionMismatch(std::string(op) + ": context/parameter channel mismatch (U " +
                                dims(params.U.rows(), params.U.cols()) + ", v " + std::to_string(params.v.size()) +
                                ", ctx " + std::to_string(ctx.size()) + ", map " + dims(o.rows(), o.cols()) + ")");
    }
}

AttentionResult pool(const FeatureMap& x, const Vec& scores) {
    AttentionResult r;
    r.weights = softmax(scores);
    r.pooled.assign(x.cols(), 0.0);
    for (std::size_t l = 0; l < x.rows(); ++l) axpy(r.weights[l], x.row(l), r.pooled);
    return r;
}

// Shared backward of pooled = sum_l softmax(s)_l x_l. Writes the direct path
// into grad_x and returns dL/ds.
Vec pool_backward(const FeatureMap& x, const Vec& weights, std::span<const double> grad_pooled, Matrix& grad_x) {
    Vec grad_w(x.rows());
    for (std::size_t l = 0; l < x.rows(); ++l) {
        grad_w[l] = dot(grad_pooled, x.row(l));
        axpy(weights[l], grad_pooled, grad_x.row(l));
    }
    return softmax_backward(weights, grad_w);
}

}  // namespace

TagVector::TagVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        if (bits_[i] > 1) throw InvalidArgument("tag vector entry " + std::to_string(i) + " is not 0/1");
    }
}

TagVector TagVector::from_ids(std::size_t size, const std::vector<std::size_t>& active) {
    TagVector t(size);
    for (std::size_t id : active) t.set(id);
    return t;
}

void TagVector::set(std::size_t i, bool on) {
    if (i >= bits_.size()) {
        throw InvalidArgument("tag id " + std::to_string(i) + " out of range for vocabulary of " +
                              std::to_string(bits_.size()));
    }
    bits_[i] = on ? 1 : 0;
}

std::vector<std::size_t> TagVector::active() const {
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < bits_.size(); ++i) {
        if (bits_[i]) ids.push_back(i);
    }
    return ids;
}

Vec tag_embed(const TagVector& tags, const TagAttentionParams& params) {
    if (params.W.rows() != tags.size()) {
        throw DimensionMismatch("tag_embed: tag vector has " + std::to_string(tags.size()) + " entries but W is " +
                                dims(params.W.rows(), params.W.cols()));
    }
    Vec e(params.W.cols(), 0.0);
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (tags.test(i)) axpy(1.0, params.W.row(i), e);
    }
    return e;
}

AttentionResult tag_attend(const FeatureMap& x, const TagVector& tags, const TagAttentionParams& params) {
    check_tag_dims(x, tags, params, "tag_attend");
    const Vec e = tag_embed(tags, params);
    Vec scores(x.rows());
    for (std::size_t l = 0; l < x.rows(); ++l) scores[l] = dot(x.row(l), e);
    return pool(x, scores);
}

AttentionResult context_attend(const FeatureMap& o, std::span<const double> ctx,
                               const ContextAttentionParams& params) {
    check_context_dims(o, ctx, params, "context_attend");
    Vec scores(o.rows());
    for (std::size_t l = 0; l < o.rows(); ++l) scores[l] = dot(params.v, o.row(l)) + dot(params.U.row(l), ctx);
    return pool(o, scores);
}

TagAttentionGrads tag_attend_backward(const FeatureMap& x, const TagVector& tags, const TagAttentionParams& params,
                                      std::span<const double> grad_pooled) {
    check_tag_dims(x, tags, params, "tag_attend_backward");
    if (grad_pooled.size() != x.cols()) throw DimensionMismatch("tag_attend_backward: grad_pooled length");

    const Vec e = tag_embed(tags, params);
    Vec scores(x.rows());
    for (std::size_t l = 0; l < x.rows(); ++l) scores[l] = dot(x.row(l), e);
    const Vec weights = softmax(scores);

    TagAttentionGrads g{Matrix(x.rows(), x.cols()), Matrix(params.W.rows(), params.W.cols())};
    const Vec grad_scores = pool_backward(x, weights, grad_pooled, g.x);

    // score_l = x_l . e
    Vec grad_e(x.cols(), 0.0);
    for (std::size_t l = 0; l < x.rows(); ++l) {
        axpy(grad_scores[l], e, g.x.row(l));
        axpy(grad_scores[l], x.row(l), grad_e);
    }
    for (std::size_t i = 0; i < tags.size(); ++i) {
        if (tags.test(i)) axpy(1.0, grad_e, g.W.row(i));
    }
    return g;
}

ContextAttentionGrads context_attend_backward(const FeatureMap& o, std::span<const double> ctx,
                                              const ContextAttentionParams& params,
                                              std::span<const double> grad_pooled) {
    check_context_dims(o, ctx, params, "context_attend_backward");
    if (grad_pooled.size() != o.cols()) throw DimensionMismatch("context_attend_backward: grad_pooled length");

    Vec scores(o.rows());
    for (std::size_t l = 0; l < o.rows(); ++l) scores[l] = dot(params.v, o.row(l)) + dot(params.U.row(l), ctx);
    const Vec weights = softmax(scores);

    ContextAttentionGrads g{Matrix(o.rows(), o.cols()), Vec(ctx.size(), 0.0), Vec(o.cols(), 0.0),
                            Matrix(params.U.rows(), params.U.cols())};
    const Vec grad_scores = pool_backward(o, weights, grad_pooled, g.o);

    for (std::size_t l = 0; l < o.rows(); ++l) {
        axpy(grad_scores[l], params.v, g.o.row(l));
        axpy(grad_scores[l], o.row(l), g.v);
        axpy(grad_scores[l], ctx, g.U.row(l));
        axpy(grad_scores[l], params.U.row(l), g.ctx);
    }
    return g;
}

}  // namespace xret
