#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "xret/attention.hpp"
#include "xret/metric.hpp"
#include "xret/numeric.hpp"

namespace xret {

// Ordered by parameter superset: each variant adds one attention head.
enum class Variant : std::uint32_t { YNet = 0, TagYNet = 1, CtxYNet = 2 };

std::string_view variant_name(Variant v);
// Accepts "ynet"/"tag"/"ctx" and the full names, case-insensitive.
Variant parse_variant(std::string_view s);

enum class Domain { User, Shop };

struct ModelConfig {
    std::size_t locations = 9;  // L = height * width
    std::size_t channels = 16;  // C
    std::size_t tags = 10;      // T
    std::size_t raw_dim = 16;
    Variant variant = Variant::CtxYNet;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Per-location affine map (a 1x1 convolution): y = weight * x + bias.
struct Affine {
    Matrix weight;  // out x in
    Vec bias;       // out

    Vec apply(std::span<const double> x) const;
};

struct ModelParams {
    Affine trunk;        // raw_dim -> C, shared by both domains
    Affine branch_shop;  // C -> C
    Affine branch_user;  // C -> C
    std::optional<TagAttentionParams> tag_attn;
    std::optional<ContextAttentionParams> ctx_attn;
};

// Named view over one parameter tensor.
template <typename T>
struct BasicTensorRef {
    std::string name;
    std::vector<std::size_t> dims;
    std::span<T> values;
};
using TensorRef = BasicTensorRef<double>;
using ConstTensorRef = BasicTensorRef<const double>;

// Tensors in canonical (serialization) order.
std::vector<TensorRef> tensors(ModelParams& p);
std::vector<ConstTensorRef> tensors(const ModelParams& p);

ModelParams zeros_like(const ModelParams& p);
Vec flatten(const ModelParams& p);
void unflatten(std::span<const double> flat, ModelParams& p);

// Tensor groups that can be excluded from gradient updates.
struct FreezeMask {
    bool trunk = false;
    bool branch_shop = false;
    bool branch_user = false;
    bool tag_attn = false;
    bool ctx_attn = false;

    bool frozen(std::string_view tensor_name) const;
};

struct Model {
    ModelConfig config;
    ModelParams params;

    // Checks every tensor shape against config and that the attention heads
    // present match the variant.
    void validate() const;
};

// Trunk and branches start at identity plus uniform noise in [-s, s];
// W, v and U are uniform in [-s, s]; s = 1 / sqrt(C); biases zero.
Model init_model(const ModelConfig& config, std::uint64_t seed);

// Re-targets a model to a larger variant, keeping shared tensors and
// fresh-initializing the added heads. Shrinking drops heads.
Model retarget(const Model& model, Variant target, std::uint64_t seed);

// branch(relu(trunk(raw_l))) for every location.
FeatureMap extract_features(const Matrix& raw, Domain domain, const Model& model);

// Tag-attended, normalized shop embedding. Requires TagYNet or CtxYNet.
Vec embed_shop(const Matrix& raw, const TagVector& tags, const Model& model);
// Uniform-pooled, normalized shop embedding (the YNet database path).
Vec embed_shop_simple(const Matrix& raw, const Model& model);
// The database embedding for the model's variant.
Vec embed_database(const Matrix& raw, const TagVector& tags, const Model& model);

Vec embed_user_simple(const Matrix& raw, const Model& model);
// Context-attended query embedding. Requires CtxYNet.
Vec embed_user_context(const Matrix& raw, std::span<const double> shop_embedding, const Model& model);
// Same, from already-extracted user features (reused across re-rank candidates).
Vec embed_user_context_features(const FeatureMap& user_features, std::span<const double> shop_embedding,
                                const Model& model);

struct TripleInput {
    const Matrix& anchor_raw;
    const Matrix& positive_raw;
    const Matrix& negative_raw;
    const TagVector& positive_tags;
    const TagVector& negative_tags;
};

struct TripleForward {
    double loss = 0.0;
    TripleEmbeddings embeddings;
};

// YNet and TagYNet use the uniform anchor embedding for both o_p and o_q;
// CtxYNet attends the anchor against each candidate.
TripleForward forward_triple(const TripleInput& in, const Model& model, double alpha,
                             DistanceKind kind = DistanceKind::Squared);

struct TripleBackward {
    double loss = 0.0;
    ModelParams grads;
};

TripleBackward backward_triple(const TripleInput& in, const Model& model, double alpha, const FreezeMask& freeze = {},
                               DistanceKind kind = DistanceKind::Squared);

// Adds this triple's gradients into `grads` (shaped like model.params) and
// returns the loss.
double accumulate_triple_gradients(const TripleInput& in, const Model& model, double alpha, const FreezeMask& freeze,
                                   ModelParams& grads, DistanceKind kind = DistanceKind::Squared);

struct StageMeta {
    std::uint32_t epoch = 0;
    std::uint64_t seed = 0;
    std::string stage;
    bool operator==(const StageMeta&) const = default;
};

struct Checkpoint {
    Model model;
    StageMeta meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

using Fingerprint = std::array<std::uint8_t, 32>;

// SHA-256 over config and parameter tensors (stage metadata excluded).
Fingerprint fingerprint(const Model& model);
std::string to_hex(const Fingerprint& fp);

}  // namespace xret
