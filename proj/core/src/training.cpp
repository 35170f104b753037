#include "xret/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <thread>

#include "xret/errors.hpp"

namespace xret {

double StageMargins::for_stage(Variant v) const {
    switch (v) {
        case Variant::YNet: return ynet;
        case Variant::TagYNet: return tag;
        case Variant::CtxYNet: return ctx;
    }
    return ctx;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidArgument("train config: batch_size must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("train config: momentum must be in [0, 1)");
    if (!(base_lr > 0.0)) throw InvalidArgument("train config: base_lr must be > 0");
    if (!(lr_decay > 0.0)) throw InvalidArgument("train config: lr_decay must be > 0");
    if (decay_every < 1) throw InvalidArgument("train config: decay_every must be >= 1");
    if (margins.ynet < 0 || margins.tag < 0 || margins.ctx < 0) {
        throw InvalidArgument("train config: margins must be >= 0");
    }
    if (threads < 1) throw InvalidArgument("train config: threads must be >= 1");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    return cfg.base_lr * std::pow(cfg.lr_decay, static_cast<double>(epoch / cfg.decay_every));
}

TripleSampler::TripleSampler(const Dataset& data) : data_(data) {
    std::map<std::uint64_t, std::vector<std::size_t>> by_product;
    for (std::size_t i = 0; i < data.shops.size(); ++i) by_product[data.shops[i].product].push_back(i);
    if (by_product.size() < 2) {
        throw InvalidArgument("triple sampling needs shop images of at least 2 distinct products, found " +
                              std::to_string(by_product.size()));
    }
    for (std::size_t i = 0; i < data.users.size(); ++i) {
        auto it = by_product.find(data.users[i].product);
        if (it == by_product.end()) {
            ++excluded_;
            continue;
        }
        anchors_.push_back(i);
        positives_.push_back(it->second);
    }
    if (anchors_.empty()) throw InvalidArgument("triple sampling: no user image has a same-product shop image");
}

Triple TripleSampler::draw(std::mt19937_64& rng) const {
    std::uniform_int_distribution<std::size_t> pick_anchor(0, anchors_.size() - 1);
    const std::size_t a = pick_anchor(rng);
    const auto& pos = positives_[a];
    std::uniform_int_distribution<std::size_t> pick_pos(0, pos.size() - 1);
    const std::size_t p = pos[pick_pos(rng)];

    // Rejection keeps the negative uniform over other-product shop images.
    const std::uint64_t product = data_.users[anchors_[a]].product;
    std::uniform_int_distribution<std::size_t> pick_shop(0, data_.shops.size() - 1);
    std::size_t n = pick_shop(rng);
    while (data_.shops[n].product == product) n = pick_shop(rng);

    return {data_.users[anchors_[a]].id, data_.shops[p].id, data_.shops[n].id};
}

TripleSample sample_triples(const Dataset& data, std::size_t count, std::mt19937_64& rng) {
    const TripleSampler sampler(data);
    TripleSample s;
    s.excluded_anchors = sampler.excluded_anchors();
    s.triples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) s.triples.push_back(sampler.draw(rng));
    return s;
}

void sgd_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr, double momentum,
              const FreezeMask& freeze) {
    auto p = tensors(params);
    const auto g = tensors(grads);
    auto v = tensors(velocity);
    if (p.size() != g.size() || p.size() != v.size()) throw DimensionMismatch("sgd_step: tensor sets differ");
    for (std::size_t t = 0; t < p.size(); ++t) {
        if (freeze.frozen(p[t].name)) continue;
        if (p[t].values.size() != g[t].values.size() || p[t].values.size() != v[t].values.size()) {
            throw DimensionMismatch("sgd_step: shape mismatch in " + p[t].name);
        }
        for (std::size_t i = 0; i < p[t].values.size(); ++i) {
            v[t].values[i] = momentum * v[t].values[i] - lr * g[t].values[i];
            p[t].values[i] += v[t].values[i];
        }
    }
}

FreezeMask stage_freeze(Variant stage) {
    FreezeMask f;
    f.trunk = stage != Variant::YNet;
    return f;
}

std::string format_metrics_line(const EpochStats& e) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.6g\t%.6g", e.epoch, std::string(variant_name(e.stage)).c_str(), e.lr,
                  e.mean_loss);
    return buf;
}

TripleResolver::TripleResolver(const Dataset& data) : data_(data) {
    for (std::size_t i = 0; i < data.users.size(); ++i) users_.emplace(data.users[i].id, i);
    for (std::size_t i = 0; i < data.shops.size(); ++i) shops_.emplace(data.shops[i].id, i);
}

TripleInput TripleResolver::resolve(const Triple& t) const {
    auto find = [](const auto& index, std::uint64_t id, const char* what) {
        auto it = index.find(id);
        if (it == index.end()) throw InvalidArgument(std::string("unknown ") + what + " id " + std::to_string(id));
        return it->second;
    };
    const Item& o = data_.users[find(users_, t.anchor, "anchor")];
    const Item& p = data_.shops[find(shops_, t.positive, "positive")];
    const Item& q = data_.shops[find(shops_, t.negative, "negative")];
    return {o.raw, p.raw, q.raw, p.tags, q.tags};
}

double batch_gradients(const std::vector<Triple>& batch, const TripleResolver& resolver, const Model& model,
                       double alpha, const FreezeMask& freeze, DistanceKind kind, std::size_t threads,
                       ModelParams& grads) {
    grads = zeros_like(model.params);
    if (batch.empty()) return 0.0;

    std::vector<ModelParams> per_triple(batch.size(), grads);
    std::vector<double> losses(batch.size(), 0.0);
    auto work = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            losses[i] = accumulate_triple_gradients(resolver.resolve(batch[i]), model, alpha, freeze, per_triple[i], kind);
        }
    };
    const std::size_t n_threads = std::min(std::max<std::size_t>(threads, 1), batch.size());
    if (n_threads == 1) {
        work(0, batch.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (batch.size() + n_threads - 1) / n_threads;
        for (std::size_t b = 0; b < batch.size(); b += chunk) pool.emplace_back(work, b, std::min(b + chunk, batch.size()));
        for (auto& t : pool) t.join();
    }

    const double inv = 1.0 / static_cast<double>(batch.size());
    auto total = tensors(grads);
    double loss = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto part = tensors(per_triple[i]);
        for (std::size_t t = 0; t < total.size(); ++t) axpy(inv, part[t].values, total[t].values);
        loss += losses[i];
    }
    return loss * inv;
}

double mean_loss(const std::vector<Triple>& triples, const TripleResolver& resolver, const Model& model, double alpha,
                 DistanceKind kind) {
    if (triples.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& t : triples) sum += forward_triple(resolver.resolve(t), model, alpha, kind).loss;
    return sum / static_cast<double>(triples.size());
}

namespace {

void check_compatible(const ModelConfig& ckpt, const ModelConfig& want) {
    auto mismatch = [](const char* tensor, const char* dim, std::size_t have, std::size_t need) {
        throw IncompatibleCheckpoint("checkpoint tensor " + std::string(tensor) + " has " + dim + " = " +
                                     std::to_string(have) + ", stage expects " + std::to_string(need));
    };
    if (ckpt.raw_dim != want.raw_dim) mismatch("trunk.weight", "raw_dim", ckpt.raw_dim, want.raw_dim);
    if (ckpt.channels != want.channels) mismatch("trunk.weight", "channels", ckpt.channels, want.channels);
    if (ckpt.tags != want.tags) mismatch("tag_attn.W", "tags", ckpt.tags, want.tags);
    if (ckpt.locations != want.locations) mismatch("ctx_attn.U", "locations", ckpt.locations, want.locations);
}

}  // namespace

StageResult train_stage(Variant stage, const Dataset& data, const TrainConfig& cfg, const std::optional<Checkpoint>& init,
                        const ModelConfig& config, const EpochCallback& on_epoch) {
    cfg.validate();
    ModelConfig target = config;
    target.variant = stage;
    target.validate();

    StageResult result;
    if (init) {
        init->model.validate();
        check_compatible(init->model.config, target);
        result.checkpoint = {retarget(init->model, stage, cfg.seed), init->meta};
    } else {
        result.checkpoint = {init_model(target, cfg.seed), {}};
    }
    result.checkpoint.meta.stage = std::string(variant_name(stage));
    result.checkpoint.meta.seed = cfg.seed;
    result.checkpoint.meta.epoch = 0;
    if (cfg.epochs == 0) return result;

    Model& model = result.checkpoint.model;
    const TripleSampler sampler(data);
    const TripleResolver resolver(data);
    const FreezeMask freeze = stage_freeze(stage);
    const double alpha = cfg.margins.for_stage(stage);
    ModelParams velocity = zeros_like(model.params);
    ModelParams grads;

    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(stage)};
    std::mt19937_64 rng(seq);

    const std::size_t per_epoch = sampler.eligible_anchors();
    std::vector<Triple> batch;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.max_steps && result.steps >= cfg.max_steps) break;
        const double lr = lr_at(epoch, cfg);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        while (seen < per_epoch && !(cfg.max_steps && result.steps >= cfg.max_steps)) {
            const std::size_t n = std::min(cfg.batch_size, per_epoch - seen);
            batch.clear();
            for (std::size_t i = 0; i < n; ++i) batch.push_back(sampler.draw(rng));
            const double loss = batch_gradients(batch, resolver, model, alpha, freeze, cfg.distance, cfg.threads, grads);
            if (!std::isfinite(loss)) {
                throw TrainingDiverged("non-finite loss in " + std::string(variant_name(stage)) + " epoch " +
                                       std::to_string(epoch) + " step " + std::to_string(result.steps));
            }
            sgd_step(model.params, grads, velocity, lr, cfg.momentum, freeze);
            if (!all_finite(flatten(model.params))) {
                throw TrainingDiverged("non-finite parameters after step " + std::to_string(result.steps));
            }
            loss_sum += loss * static_cast<double>(n);
            seen += n;
            ++result.steps;
        }
        EpochStats stats{epoch, stage, lr, loss_sum / static_cast<double>(seen)};
        result.curve.push_back(stats);
        result.checkpoint.meta.epoch = static_cast<std::uint32_t>(epoch + 1);
        if (on_epoch) on_epoch(stats);
    }
    return result;
}

}  // namespace xret
