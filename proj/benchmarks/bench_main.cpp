#include <benchmark/benchmark.h>

#include <random>

#include "xret/attention.hpp"
#include "xret/dataio.hpp"
#include "xret/model.hpp"
#include "xret/retrieval.hpp"
#include "xret/training.hpp"

using namespace xret;

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    std::normal_distribution<double> d;
    Matrix m(rows, cols);
    for (double& x : m.flat()) x = d(rng);
    return m;
}

void BM_TagAttend(benchmark::State& state) {
    const std::size_t L = static_cast<std::size_t>(state.range(0));
    const std::size_t C = static_cast<std::size_t>(state.range(1));
    std::mt19937_64 rng(1);
    const Matrix x = gaussian(L, C, rng);
    const TagAttentionParams p{gaussian(10, C, rng)};
    const TagVector t = TagVector::from_ids(10, {1, 4, 7});
    for (auto _ : state) benchmark::DoNotOptimize(tag_attend(x, t, p));
}
BENCHMARK(BM_TagAttend)->Args({9, 16})->Args({49, 64})->Args({196, 256});

void BM_ContextAttend(benchmark::State& state) {
    const std::size_t L = static_cast<std::size_t>(state.range(0));
    const std::size_t C = static_cast<std::size_t>(state.range(1));
    std::mt19937_64 rng(2);
    const Matrix o = gaussian(L, C, rng);
    const ContextAttentionParams p{Vec(C, 0.1), gaussian(L, C, rng)};
    const Vec ctx = l2_normalize(Vec(C, 1.0));
    for (auto _ : state) benchmark::DoNotOptimize(context_attend(o, ctx, p));
}
BENCHMARK(BM_ContextAttend)->Args({9, 16})->Args({49, 64})->Args({196, 256});

void BM_BackwardTriple(benchmark::State& state) {
    const auto variant = static_cast<Variant>(state.range(0));
    ModelConfig c;
    c.variant = variant;
    const Model m = init_model(c, 3);
    std::mt19937_64 rng(3);
    const Matrix a = gaussian(c.locations, c.raw_dim, rng), p = gaussian(c.locations, c.raw_dim, rng),
                 q = gaussian(c.locations, c.raw_dim, rng);
    const TagVector pt = TagVector::from_ids(c.tags, {0, 5}), qt = TagVector::from_ids(c.tags, {2, 6});
    const TripleInput in{a, p, q, pt, qt};
    for (auto _ : state) benchmark::DoNotOptimize(backward_triple(in, m, 10.0));
    state.SetLabel(std::string(variant_name(variant)));
}
BENCHMARK(BM_BackwardTriple)->Arg(0)->Arg(1)->Arg(2);

struct SearchFixture {
    SyntheticData data;
    Model model;
    ShopIndex index;

    explicit SearchFixture(std::size_t products) {
        SyntheticSpec spec;
        spec.n_products = 2;
        spec.n_heldout_products = products;
        data = synthesize(spec);
        model = init_model(spec.model_config(), 4);
        index = build_index(data.test.shops, model);
    }
};

void BM_InitialSearch(benchmark::State& state) {
    const SearchFixture f(static_cast<std::size_t>(state.range(0)));
    const Searcher s(f.index, f.model);
    const Matrix& q = f.data.test.users.front().raw;
    for (auto _ : state) benchmark::DoNotOptimize(s.initial_search(q, kDefaultRerankDepth));
    state.counters["index_size"] = static_cast<double>(f.index.size());
}
BENCHMARK(BM_InitialSearch)->Arg(100)->Arg(1000)->Arg(5000);

void BM_Rerank(benchmark::State& state) {
    const SearchFixture f(1000);
    const Searcher s(f.index, f.model, static_cast<std::size_t>(state.range(1)));
    const Matrix& q = f.data.test.users.front().raw;
    const RankedList candidates = s.initial_search(q, static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(s.rerank(q, candidates));
}
BENCHMARK(BM_Rerank)->Args({20, 1})->Args({256, 1})->Args({256, 4});

void BM_TrainEpoch(benchmark::State& state) {
    const SyntheticData data = synthesize(SyntheticSpec{});
    TrainConfig cfg;
    cfg.epochs = 1;
    const auto stage = static_cast<Variant>(state.range(0));
    for (auto _ : state) {
        benchmark::DoNotOptimize(train_stage(stage, data.train, cfg, std::nullopt, data.spec.model_config()));
    }
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(2)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
