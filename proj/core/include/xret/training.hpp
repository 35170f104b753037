#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "xret/dataio.hpp"
#include "xret/model.hpp"

namespace xret {

struct StageMargins {
    double ynet = 0.3;
    double tag = 0.3;
    double ctx = 0.5;

    double for_stage(Variant v) const;
};

struct TrainConfig {
    std::size_t batch_size = 32;
    double momentum = 0.9;
    double base_lr = 0.01;
    double lr_decay = 0.1;
    std::size_t decay_every = 30;  // epochs
    StageMargins margins;
    std::uint64_t seed = 1;
    std::size_t epochs = 30;     // per stage
    std::size_t max_steps = 0;   // per stage; 0 = no cap
    std::size_t threads = 1;
    DistanceKind distance = DistanceKind::Squared;

    void validate() const;
};

// base_lr * lr_decay ^ floor(epoch / decay_every)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

// Item ids. product(anchor) == product(positive) != product(negative).
struct Triple {
    std::uint64_t anchor = 0;
    std::uint64_t positive = 0;
    std::uint64_t negative = 0;
    bool operator==(const Triple&) const = default;
};

struct TripleSample {
    std::vector<Triple> triples;
    std::size_t excluded_anchors = 0;  // user images whose product has no shop image
};

// Uniform anchor, uniform same-product positive, uniform other-product
// negative.
class TripleSampler {
public:
    explicit TripleSampler(const Dataset& data);

    Triple draw(std::mt19937_64& rng) const;
    std::size_t eligible_anchors() const noexcept { return anchors_.size(); }
    std::size_t excluded_anchors() const noexcept { return excluded_; }

private:
    const Dataset& data_;
    std::vector<std::size_t> anchors_;                        // indices into data.users
    std::vector<std::vector<std::size_t>> positives_;         // parallel to anchors_
    std::size_t excluded_ = 0;
};

TripleSample sample_triples(const Dataset& data, std::size_t count, std::mt19937_64& rng);

// velocity <- momentum * velocity - lr * grad; param <- param + velocity.
// Frozen tensors (and their velocity) are left untouched.
void sgd_step(ModelParams& params, const ModelParams& grads, ModelParams& velocity, double lr, double momentum,
              const FreezeMask& freeze = {});

// Trunk is frozen once the tag head is trained.
FreezeMask stage_freeze(Variant stage);

struct EpochStats {
    std::size_t epoch = 0;
    Variant stage = Variant::YNet;
    double lr = 0;
    double mean_loss = 0;
};

// `epoch<TAB>stage<TAB>lr<TAB>mean_loss` with 6 significant digits.
std::string format_metrics_line(const EpochStats& e);

struct StageResult {
    Checkpoint checkpoint;
    std::vector<EpochStats> curve;
    std::size_t steps = 0;
};

// Resolves id-keyed triples against a dataset.
class TripleResolver {
public:
    explicit TripleResolver(const Dataset& data);
    TripleInput resolve(const Triple& t) const;

private:
    const Dataset& data_;
    std::unordered_map<std::uint64_t, std::size_t> users_;
    std::unordered_map<std::uint64_t, std::size_t> shops_;
};

// Mean loss and averaged gradients over a batch. The reduction order is the
// batch order regardless of thread count.
double batch_gradients(const std::vector<Triple>& batch, const TripleResolver& resolver, const Model& model,
                       double alpha, const FreezeMask& freeze, DistanceKind kind, std::size_t threads,
                       ModelParams& grads);

double mean_loss(const std::vector<Triple>& triples, const TripleResolver& resolver, const Model& model, double alpha,
                 DistanceKind kind = DistanceKind::Squared);

using EpochCallback = std::function<void(const EpochStats&)>;

// Runs mini-batch SGD for one curriculum stage. With `init` the model is
// retargeted to `stage`; otherwise it is freshly initialized from `config`.
// An epoch is as many triples as there are eligible user images.
StageResult train_stage(Variant stage, const Dataset& data, const TrainConfig& cfg, const std::optional<Checkpoint>& init,
                        const ModelConfig& config, const EpochCallback& on_epoch = {});

}  // namespace xret
