#include "xret/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <random>

#include <openssl/evp.h>

#include "binio.hpp"
#include "xret/errors.hpp"

namespace xret {

namespace {

constexpr std::size_t kMaxDim = 1u << 20;

std::string shape_str(const std::vector<std::size_t>& dims) {
    std::string s;
    for (std::size_t i = 0; i < dims.size(); ++i) s += (i ? "x" : "") + std::to_string(dims[i]);
    return s;
}

// Tensor streams are seeded independently so that a head initialized by
// retarget() equals the same head from init_model() with that seed.
enum class Stream : std::uint64_t { Trunk = 1, BranchShop, BranchUser, TagW, CtxV, CtxU };

void fill_uniform(std::span<double> values, double scale, std::uint64_t seed, Stream stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (double& x : values) x += dist(rng);
}

Affine identity_affine(std::size_t out, std::size_t in, double scale, std::uint64_t seed, Stream stream) {
    Affine a{Matrix::identity(out, in), Vec(out, 0.0)};
    fill_uniform(a.weight.flat(), scale, seed, stream);
    return a;
}

TagAttentionParams init_tag_head(const ModelConfig& c, std::uint64_t seed) {
    TagAttentionParams p{Matrix(c.tags, c.channels)};
    fill_uniform(p.W.flat(), 1.0 / std::sqrt(static_cast<double>(c.channels)), seed, Stream::TagW);
    return p;
}

ContextAttentionParams init_ctx_head(const ModelConfig& c, std::uint64_t seed) {
    const double s = 1.0 / std::sqrt(static_cast<double>(c.channels));
    ContextAttentionParams p{Vec(c.channels, 0.0), Matrix(c.locations, c.channels)};
    fill_uniform(p.v, s, seed, Stream::CtxV);
    fill_uniform(p.U.flat(), s, seed, Stream::CtxU);
    return p;
}

struct FeatureCache {
    const Matrix* raw = nullptr;
    Matrix pre;  // trunk pre-activation
    Matrix act;  // relu(pre)
    FeatureMap out;
};

void check_raw(const Matrix& raw, const ModelConfig& c) {
    if (raw.rows() != c.locations || raw.cols() != c.raw_dim) {
        throw DimensionMismatch("raw feature map is " + std::to_string(raw.rows()) + "x" + std::to_string(raw.cols()) +
                                ", model expects " + std::to_string(c.locations) + "x" + std::to_string(c.raw_dim));
    }
}

FeatureCache forward_features(const Matrix& raw, const Affine& branch, const Model& m) {
    check_raw(raw, m.config);
    const std::size_t L = m.config.locations, C = m.config.channels;
    FeatureCache fc{&raw, Matrix(L, C), Matrix(L, C), Matrix(L, C)};
    for (std::size_t l = 0; l < L; ++l) {
        const Vec h = m.params.trunk.apply(raw.row(l));
        std::copy(h.begin(), h.end(), fc.pre.row(l).begin());
        auto a = fc.act.row(l);
        for (std::size_t c = 0; c < C; ++c) a[c] = std::max(h[c], 0.0);
        const Vec y = branch.apply(a);
        std::copy(y.begin(), y.end(), fc.out.row(l).begin());
    }
    return fc;
}

// Backprop of branch(relu(trunk(raw))). Null gradient targets are frozen.
void backward_features(const FeatureCache& fc, const Matrix& grad_out, const Model& m, const Affine& branch,
                       Affine* grad_trunk, Affine* grad_branch) {
    const std::size_t C = m.config.channels;
    Vec grad_pre(C);
    for (std::size_t l = 0; l < grad_out.rows(); ++l) {
        const auto g = grad_out.row(l);
        if (grad_branch) {
            for (std::size_t o = 0; o < C; ++o) {
                axpy(g[o], fc.act.row(l), grad_branch->weight.row(o));
                grad_branch->bias[o] += g[o];
            }
        }
        if (!grad_trunk) continue;
        std::fill(grad_pre.begin(), grad_pre.end(), 0.0);
        for (std::size_t o = 0; o < C; ++o) axpy(g[o], branch.weight.row(o), grad_pre);
        const auto pre = fc.pre.row(l);
        for (std::size_t c = 0; c < C; ++c) {
            if (pre[c] <= 0.0) continue;
            axpy(grad_pre[c], fc.raw->row(l), grad_trunk->weight.row(c));
            grad_trunk->bias[c] += grad_pre[c];
        }
    }
}

struct ShopCache {
    FeatureCache features;
    Vec pooled;
    Vec embedding;
    bool tag_attention = false;
};

ShopCache shop_forward(const Matrix& raw, const TagVector& tags, const Model& m, bool tag_attention) {
    ShopCache sc{forward_features(raw, m.params.branch_shop, m), {}, {}, tag_attention};
    if (tag_attention) {
        sc.pooled = tag_attend(sc.features.out, tags, *m.params.tag_attn).pooled;
    } else {
        sc.pooled = column_mean(sc.features.out);
    }
    sc.embedding = l2_normalize(sc.pooled);
    return sc;
}

Matrix uniform_pool_backward(std::span<const double> grad_pooled, std::size_t rows) {
    Matrix g(rows, grad_pooled.size());
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t l = 0; l < rows; ++l) axpy(inv, grad_pooled, g.row(l));
    return g;
}

void shop_backward(const ShopCache& sc, std::span<const double> grad_embedding, const TagVector& tags,
                   const Model& m, const FreezeMask& freeze, ModelParams& grads) {
    const Vec grad_pooled = l2_normalize_backward(sc.pooled, grad_embedding);
    Matrix grad_x;
    if (sc.tag_attention) {
        auto tg = tag_attend_backward(sc.features.out, tags, *m.params.tag_attn, grad_pooled);
        if (!freeze.tag_attn) axpy(1.0, tg.W.flat(), grads.tag_attn->W.flat());
        grad_x = std::move(tg.x);
    } else {
        grad_x = uniform_pool_backward(grad_pooled, sc.features.out.rows());
    }
    backward_features(sc.features, grad_x, m, m.params.branch_shop, freeze.trunk ? nullptr : &grads.trunk,
                      freeze.branch_shop ? nullptr : &grads.branch_shop);
}

void require_variant(const Model& m, Variant min, const char* op) {
    if (m.config.variant < min) {
        throw UnsupportedVariant(std::string(op) + " requires " + std::string(variant_name(min)) + ", model is " +
                                 std::string(variant_name(m.config.variant)));
    }
}

void write_model(binio::Writer& w, const Model& m) {
    w.u32(static_cast<std::uint32_t>(m.config.locations));
    w.u32(static_cast<std::uint32_t>(m.config.channels));
    w.u32(static_cast<std::uint32_t>(m.config.tags));
    w.u32(static_cast<std::uint32_t>(m.config.raw_dim));
    w.u32(static_cast<std::uint32_t>(m.config.variant));
}

void write_tensors(binio::Writer& w, const ModelParams& p) {
    const auto ts = tensors(p);
    w.u32(static_cast<std::uint32_t>(ts.size()));
    for (const auto& t : ts) {
        w.str(t.name);
        w.u32(static_cast<std::uint32_t>(t.dims.size()));
        for (std::size_t d : t.dims) w.u32(static_cast<std::uint32_t>(d));
        for (double x : t.values) w.f64(x);
    }
}

// Zero-valued parameters with the shapes the config prescribes.
ModelParams shaped_params(const ModelConfig& c) {
    ModelParams p;
    p.trunk = {Matrix(c.channels, c.raw_dim), Vec(c.channels, 0.0)};
    p.branch_shop = {Matrix(c.channels, c.channels), Vec(c.channels, 0.0)};
    p.branch_user = {Matrix(c.channels, c.channels), Vec(c.channels, 0.0)};
    if (c.variant >= Variant::TagYNet) p.tag_attn = TagAttentionParams{Matrix(c.tags, c.channels)};
    if (c.variant >= Variant::CtxYNet) {
        p.ctx_attn = ContextAttentionParams{Vec(c.channels, 0.0), Matrix(c.locations, c.channels)};
    }
    return p;
}

template <typename P, typename R>
std::vector<R> tensor_list(P& p) {
    std::vector<R> out;
    auto add_affine = [&](const char* prefix, auto& a) {
        out.push_back({std::string(prefix) + ".weight", {a.weight.rows(), a.weight.cols()}, a.weight.flat()});
        out.push_back({std::string(prefix) + ".bias", {a.bias.size()}, a.bias});
    };
    add_affine("trunk", p.trunk);
    add_affine("branch_shop", p.branch_shop);
    add_affine("branch_user", p.branch_user);
    if (p.tag_attn) out.push_back({"tag_attn.W", {p.tag_attn->W.rows(), p.tag_attn->W.cols()}, p.tag_attn->W.flat()});
    if (p.ctx_attn) {
        out.push_back({"ctx_attn.v", {p.ctx_attn->v.size()}, p.ctx_attn->v});
        out.push_back({"ctx_attn.U", {p.ctx_attn->U.rows(), p.ctx_attn->U.cols()}, p.ctx_attn->U.flat()});
    }
    return out;
}

}  // namespace

std::string_view variant_name(Variant v) {
    switch (v) {
        case Variant::YNet: return "YNet";
        case Variant::TagYNet: return "TagYNet";
        case Variant::CtxYNet: return "CtxYNet";
    }
    return "unknown";
}

Variant parse_variant(std::string_view s) {
    std::string lower(s);
    std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
    if (lower == "ynet") return Variant::YNet;
    if (lower == "tag" || lower == "tagynet") return Variant::TagYNet;
    if (lower == "ctx" || lower == "ctxynet") return Variant::CtxYNet;
    throw InvalidArgument("unknown model variant '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
    auto check = [](std::size_t v, const char* name) {
        if (v == 0 || v > kMaxDim) {
            throw InvalidArgument(std::string("model config: ") + name + " = " + std::to_string(v) + " out of range");
        }
    };
    check(locations, "locations");
    check(channels, "channels");
    check(tags, "tags");
    check(raw_dim, "raw_dim");
    if (variant > Variant::CtxYNet) throw InvalidArgument("model config: unknown variant");
}

Vec Affine::apply(std::span<const double> x) const {
    if (x.size() != weight.cols()) throw DimensionMismatch("affine: input length mismatch");
    Vec y = bias;
    for (std::size_t o = 0; o < weight.rows(); ++o) y[o] += dot(weight.row(o), x);
    return y;
}

std::vector<TensorRef> tensors(ModelParams& p) { return tensor_list<ModelParams, TensorRef>(p); }
std::vector<ConstTensorRef> tensors(const ModelParams& p) {
    return tensor_list<const ModelParams, ConstTensorRef>(p);
}

ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for (auto& t : tensors(z)) std::fill(t.values.begin(), t.values.end(), 0.0);
    return z;
}

Vec flatten(const ModelParams& p) {
    Vec flat;
    for (const auto& t : tensors(p)) flat.insert(flat.end(), t.values.begin(), t.values.end());
    return flat;
}

void unflatten(std::span<const double> flat, ModelParams& p) {
    std::size_t pos = 0;
    for (auto& t : tensors(p)) {
        if (pos + t.values.size() > flat.size()) throw DimensionMismatch("unflatten: too few values");
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(pos), t.values.size(), t.values.begin());
        pos += t.values.size();
    }
    if (pos != flat.size()) throw DimensionMismatch("unflatten: too many values");
}

bool FreezeMask::frozen(std::string_view name) const {
    const auto group = name.substr(0, name.find('.'));
    if (group == "trunk") return trunk;
    if (group == "branch_shop") return branch_shop;
    if (group == "branch_user") return branch_user;
    if (group == "tag_attn") return tag_attn;
    if (group == "ctx_attn") return ctx_attn;
    return false;
}

void Model::validate() const {
    config.validate();
    const auto expected = tensors(shaped_params(config));
    const auto actual = tensors(params);
    if (expected.size() != actual.size()) {
        throw IncompatibleCheckpoint("model has " + std::to_string(actual.size()) + " tensors, variant " +
                                     std::string(variant_name(config.variant)) + " expects " +
                                     std::to_string(expected.size()));
    }
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (expected[i].name != actual[i].name || expected[i].dims != actual[i].dims) {
            throw IncompatibleCheckpoint("tensor " + actual[i].name + " has shape " + shape_str(actual[i].dims) +
                                         ", expected " + expected[i].name + " " + shape_str(expected[i].dims));
        }
        if (!all_finite(actual[i].values)) throw InvalidArgument("tensor " + actual[i].name + " has non-finite values");
    }
}

Model init_model(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    const double s = 1.0 / std::sqrt(static_cast<double>(config.channels));
    Model m{config, {}};
    m.params.trunk = identity_affine(config.channels, config.raw_dim, s, seed, Stream::Trunk);
    m.params.branch_shop = identity_affine(config.channels, config.channels, s, seed, Stream::BranchShop);
    m.params.branch_user = identity_affine(config.channels, config.channels, s, seed, Stream::BranchUser);
    if (config.variant >= Variant::TagYNet) m.params.tag_attn = init_tag_head(config, seed);
    if (config.variant >= Variant::CtxYNet) m.params.ctx_attn = init_ctx_head(config, seed);
    return m;
}

Model retarget(const Model& model, Variant target, std::uint64_t seed) {
    Model m = model;
    m.config.variant = target;
    if (target >= Variant::TagYNet) {
        if (!m.params.tag_attn) m.params.tag_attn = init_tag_head(m.config, seed);
    } else {
        m.params.tag_attn.reset();
    }
    if (target >= Variant::CtxYNet) {
        if (!m.params.ctx_attn) m.params.ctx_attn = init_ctx_head(m.config, seed);
    } else {
        m.params.ctx_attn.reset();
    }
    return m;
}

FeatureMap extract_features(const Matrix& raw, Domain domain, const Model& model) {
    const Affine& branch = domain == Domain::Shop ? model.params.branch_shop : model.params.branch_user;
    return forward_features(raw, branch, model).out;
}

Vec embed_shop(const Matrix& raw, const TagVector& tags, const Model& model) {
    require_variant(model, Variant::TagYNet, "embed_shop");
    return shop_forward(raw, tags, model, true).embedding;
}

Vec embed_shop_simple(const Matrix& raw, const Model& model) {
    return l2_normalize(column_mean(extract_features(raw, Domain::Shop, model)));
}

Vec embed_database(const Matrix& raw, const TagVector& tags, const Model& model) {
    return model.config.variant >= Variant::TagYNet ? embed_shop(raw, tags, model) : embed_shop_simple(raw, model);
}

Vec embed_user_simple(const Matrix& raw, const Model& model) {
    return l2_normalize(column_mean(extract_features(raw, Domain::User, model)));
}

Vec embed_user_context(const Matrix& raw, std::span<const double> shop_embedding, const Model& model) {
    require_variant(model, Variant::CtxYNet, "embed_user_context");
    return embed_user_context_features(extract_features(raw, Domain::User, model), shop_embedding, model);
}

Vec embed_user_context_features(const FeatureMap& user_features, std::span<const double> shop_embedding,
                                const Model& model) {
    require_variant(model, Variant::CtxYNet, "embed_user_context");
    return l2_normalize(context_attend(user_features, shop_embedding, *model.params.ctx_attn).pooled);
}

TripleForward forward_triple(const TripleInput& in, const Model& model, double alpha, DistanceKind kind) {
    const bool tag = model.config.variant >= Variant::TagYNet;
    TripleForward f;
    f.embeddings.p = shop_forward(in.positive_raw, in.positive_tags, model, tag).embedding;
    f.embeddings.q = shop_forward(in.negative_raw, in.negative_tags, model, tag).embedding;
    if (model.config.variant == Variant::CtxYNet) {
        const FeatureMap o = extract_features(in.anchor_raw, Domain::User, model);
        f.embeddings.o_p = embed_user_context_features(o, f.embeddings.p, model);
        f.embeddings.o_q = embed_user_context_features(o, f.embeddings.q, model);
    } else {
        f.embeddings.o_p = embed_user_simple(in.anchor_raw, model);
        f.embeddings.o_q = f.embeddings.o_p;
    }
    f.loss = triplet_loss(f.embeddings, alpha, kind);
    return f;
}

double accumulate_triple_gradients(const TripleInput& in, const Model& model, double alpha, const FreezeMask& freeze,
                                   ModelParams& grads, DistanceKind kind) {
    const bool tag = model.config.variant >= Variant::TagYNet;
    const bool ctx = model.config.variant == Variant::CtxYNet;
    const ShopCache pos = shop_forward(in.positive_raw, in.positive_tags, model, tag);
    const ShopCache neg = shop_forward(in.negative_raw, in.negative_tags, model, tag);
    const FeatureCache anchor = forward_features(in.anchor_raw, model.params.branch_user, model);

    TripleEmbeddings e{{}, {}, pos.embedding, neg.embedding};
    std::optional<AttentionResult> att_p, att_q;
    Vec anchor_pooled;
    if (ctx) {
        att_p = context_attend(anchor.out, e.p, *model.params.ctx_attn);
        att_q = context_attend(anchor.out, e.q, *model.params.ctx_attn);
        e.o_p = l2_normalize(att_p->pooled);
        e.o_q = l2_normalize(att_q->pooled);
    } else {
        anchor_pooled = column_mean(anchor.out);
        e.o_p = l2_normalize(anchor_pooled);
        e.o_q = e.o_p;
    }

    const double loss = triplet_loss(e, alpha, kind);
    if (loss <= 0.0) return 0.0;
    const TripleGrads tg = triplet_loss_backward(e, alpha, kind);

    Vec grad_p = tg.p;
    Vec grad_q = tg.q;
    Matrix grad_anchor;
    if (ctx) {
        grad_anchor = Matrix(anchor.out.rows(), anchor.out.cols());
        auto through_context = [&](const AttentionResult& att, std::span<const double> grad_emb,
                                   std::span<const double> context, Vec& grad_context) {
            const Vec grad_pooled = l2_normalize_backward(att.pooled, grad_emb);
            const auto cg = context_attend_backward(anchor.out, context, *model.params.ctx_attn, grad_pooled);
            axpy(1.0, cg.o.flat(), grad_anchor.flat());
            axpy(1.0, cg.ctx, grad_context);
            if (!freeze.ctx_attn) {
                axpy(1.0, cg.v, grads.ctx_attn->v);
                axpy(1.0, cg.U.flat(), grads.ctx_attn->U.flat());
            }
        };
        through_context(*att_p, tg.o_p, e.p, grad_p);
        through_context(*att_q, tg.o_q, e.q, grad_q);
    } else {
        Vec grad_o = tg.o_p;
        axpy(1.0, tg.o_q, grad_o);
        grad_anchor = uniform_pool_backward(l2_normalize_backward(anchor_pooled, grad_o), anchor.out.rows());
    }

    backward_features(anchor, grad_anchor, model, model.params.branch_user, freeze.trunk ? nullptr : &grads.trunk,
                      freeze.branch_user ? nullptr : &grads.branch_user);
    shop_backward(pos, grad_p, in.positive_tags, model, freeze, grads);
    shop_backward(neg, grad_q, in.negative_tags, model, freeze, grads);
    return loss;
}

TripleBackward backward_triple(const TripleInput& in, const Model& model, double alpha, const FreezeMask& freeze,
                               DistanceKind kind) {
    TripleBackward b{0.0, zeros_like(model.params)};
    b.loss = accumulate_triple_gradients(in, model, alpha, freeze, b.grads, kind);
    return b;
}

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
    ckpt.model.validate();
    binio::Writer w;
    w.magic("XATN");
    w.u32(kCheckpointVersion);
    write_model(w, ckpt.model);
    w.u32(ckpt.meta.epoch);
    w.u64(ckpt.meta.seed);
    w.str(ckpt.meta.stage);
    write_tensors(w, ckpt.model.params);
    return std::move(w.buffer());
}

Checkpoint parse_checkpoint(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes);
    r.expect_magic("XATN");
    const std::size_t version_at = r.offset();
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw ParseError("unsupported checkpoint version " + std::to_string(version), version_at);
    }

    Checkpoint ckpt;
    const std::size_t config_at = r.offset();
    ModelConfig& c = ckpt.model.config;
    c.locations = r.u32();
    c.channels = r.u32();
    c.tags = r.u32();
    c.raw_dim = r.u32();
    const std::uint32_t variant = r.u32();
    if (variant > static_cast<std::uint32_t>(Variant::CtxYNet)) {
        throw ParseError("unknown variant " + std::to_string(variant), r.offset() - 4);
    }
    c.variant = static_cast<Variant>(variant);
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw ParseError(e.what(), config_at);
    }
    ckpt.meta.epoch = r.u32();
    ckpt.meta.seed = r.u64();
    ckpt.meta.stage = r.str();

    ckpt.model.params = shaped_params(c);
    auto expected = tensors(ckpt.model.params);
    const std::size_t count_at = r.offset();
    const std::uint32_t count = r.u32();
    if (count != expected.size()) {
        throw ParseError("checkpoint has " + std::to_string(count) + " tensors, variant " +
                             std::string(variant_name(c.variant)) + " needs " + std::to_string(expected.size()),
                         count_at);
    }
    for (auto& t : expected) {
        const std::size_t at = r.offset();
        const std::string name = r.str(256);
        if (name != t.name) throw ParseError("expected tensor " + t.name + ", found '" + name + "'", at);
        const std::uint32_t rank = r.u32();
        std::vector<std::size_t> dims(rank);
        for (auto& d : dims) d = r.u32();
        if (dims != t.dims) {
            throw ParseError("tensor " + name + " has shape " + shape_str(dims) + ", expected " + shape_str(t.dims), at);
        }
        r.need(t.values.size() * 8, "tensor payload");
        for (double& x : t.values) x = r.f64();
    }
    if (!r.at_end()) throw ParseError("trailing bytes after last tensor", r.offset());
    return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    binio::write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return parse_checkpoint(binio::read_file(path)); }

Fingerprint fingerprint(const Model& model) {
    binio::Writer w;
    w.magic("XATN");
    write_model(w, model);
    write_tensors(w, model.params);
    const auto& buf = w.buffer();

    Fingerprint fp{};
    unsigned int len = 0;
    if (EVP_Digest(buf.data(), buf.size(), fp.data(), &len, EVP_sha256(), nullptr) != 1 || len != fp.size()) {
        throw Error("SHA-256 digest failed");
    }
    return fp;
}

std::string to_hex(const Fingerprint& fp) {
    static constexpr char digits[] = "0123456789abcdef";
    std::string s;
    for (std::uint8_t b : fp) {
        s += digits[b >> 4];
        s += digits[b & 0xf];
    }
    return s;
}

}  // namespace xret
