// Runs every acceptance criterion at its stated tolerance and prints one
// PASS/FAIL line per criterion. Exit status is 0 only if all pass.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "scenarios.hpp"
#include "test_support.hpp"
#include "xret/gradcheck.hpp"
#include "xret/retrieval.hpp"
#include "xret/training.hpp"

using namespace xret;
using namespace xret::testing;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix permute_rows(const Matrix& m, const std::vector<std::size_t>& perm) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        for (std::size_t c = 0; c < m.cols(); ++c) out(i, c) = m(perm[i], c);
    }
    return out;
}

std::vector<std::uint64_t> ids_of(const RankedList& r) {
    std::vector<std::uint64_t> out;
    for (const Hit& h : r) out.push_back(h.item_id);
    return out;
}

Outcome gradient_correctness() {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckOptions opts;
    opts.trials = 20;
    opts.seed = 1;
    opts.step = 1e-5;
    opts.rel_tol = 1e-4;
    opts.abs_tol = 1e-7;
    opts.small_grad = 1e-6;
    const GradCheckReport r = run_gradient_check(opts);
    const double secs = seconds_since(t0);
    double worst = 0;
    std::size_t coords = 0, failed = 0;
    for (const auto& c : r.cases) {
        worst = std::max(worst, c.max_rel_error);
        coords += c.coordinates;
        failed += c.passed ? 0 : 1;
    }
    Outcome o;
    o.pass = r.passed && r.cases.size() == 60 && secs < 60.0;
    o.detail = std::to_string(r.cases.size()) + " cases (20 configs x 3 variants), " + std::to_string(coords) +
               " coordinates, " + std::to_string(failed) + " failed, " + fmt("max rel err %.2e, %.2fs", worst, secs);
    return o;
}

Outcome attention_invariants() {
    std::mt19937_64 rng(2024);
    std::size_t violations = 0;
    double worst_shift = 0, worst_perm = 0, worst_norm = 0;
    std::uniform_real_distribution<double> score(-50.0, 50.0), shift(-100.0, 100.0);

    for (int trial = 0; trial < 1000; ++trial) {
        // Softmax normalization and shift invariance.
        const std::size_t n = uniform_size(1, 64, rng);
        Vec s(n);
        for (double& x : s) x = score(rng);
        const Vec w = softmax(s);
        if (std::abs(std::accumulate(w.begin(), w.end(), 0.0) - 1.0) > 1e-12) ++violations;
        const double k = shift(rng);
        Vec s2 = s;
        for (double& x : s2) x += k;
        worst_shift = std::max(worst_shift, max_abs_diff(w, softmax(s2)));

        // Convex hull and permutation equivariance for both attention ops.
        const std::size_t L = uniform_size(1, 16, rng), C = uniform_size(1, 8, rng), T = uniform_size(1, 6, rng);
        const Matrix x = random_matrix(L, C, rng);
        std::vector<std::size_t> perm(L);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        const TagAttentionParams tp{random_matrix(T, C, rng)};
        const TagVector tags = random_tags(T, rng);
        const ContextAttentionParams cp{random_vec(C, rng), random_matrix(L, C, rng)};
        const Vec ctx = random_unit(C, rng);

        const AttentionResult a = tag_attend(x, tags, tp);
        const AttentionResult b = tag_attend(permute_rows(x, perm), tags, tp);
        const AttentionResult c = context_attend(x, ctx, cp);
        const AttentionResult d = context_attend(permute_rows(x, perm), ctx, {cp.v, permute_rows(cp.U, perm)});
        worst_perm = std::max({worst_perm, max_abs_diff(a.pooled, b.pooled), max_abs_diff(c.pooled, d.pooled)});
        for (std::size_t i = 0; i < L; ++i) {
            worst_perm = std::max({worst_perm, std::abs(b.weights[i] - a.weights[perm[i]]),
                                   std::abs(d.weights[i] - c.weights[perm[i]])});
        }
        for (const AttentionResult* r : {&a, &c}) {
            for (std::size_t col = 0; col < C; ++col) {
                double lo = INFINITY, hi = -INFINITY;
                for (std::size_t l = 0; l < L; ++l) {
                    lo = std::min(lo, x(l, col));
                    hi = std::max(hi, x(l, col));
                }
                if (r->pooled[col] < lo - 1e-12 || r->pooled[col] > hi + 1e-12) ++violations;
            }
        }

        // Unit-norm embeddings from a random model.
        ModelConfig mc;
        mc.locations = L;
        mc.channels = C;
        mc.tags = T;
        mc.raw_dim = uniform_size(1, 8, rng);
        const Model m = init_model(mc, rng());
        const Matrix raw = random_matrix(L, mc.raw_dim, rng);
        const Vec shop = embed_shop(raw, tags, m);
        for (const Vec& e : {embed_user_simple(raw, m), shop, embed_shop_simple(raw, m), embed_user_context(raw, shop, m)}) {
            const double norm2 = squared_norm(e);
            if (norm2 == 0.0) continue;  // every location clipped by ReLU
            worst_norm = std::max(worst_norm, std::abs(std::sqrt(norm2) - 1.0));
        }
    }
    Outcome o;
    o.pass = violations == 0 && worst_shift <= 1e-12 && worst_perm <= 1e-12 && worst_norm <= 1e-10;
    o.detail = "1000 cases each; " + std::to_string(violations) + " normalization/hull violations, " +
               fmt("shift %.1e, permutation %.1e, unit norm %.1e", worst_shift, worst_perm, worst_norm);
    return o;
}

Outcome oracle_equivalence() {
    std::mt19937_64 rng(99);
    double worst_tag = 0, worst_ctx = 0, worst_dist = 0;
    std::size_t ranking_mismatches = 0, ties_seen = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const std::size_t L = uniform_size(1, 20, rng), C = uniform_size(1, 12, rng), T = uniform_size(1, 10, rng);
        const Matrix x = random_matrix(L, C, rng);
        const Matrix W = random_matrix(T, C, rng, 0.5);
        const TagVector t = random_tags(T, rng);
        const AttentionResult r = tag_attend(x, t, TagAttentionParams{W});
        const NaiveAttention n = naive_tag_attend(x, t, W);
        worst_tag = std::max({worst_tag, max_abs_diff(r.weights, n.weights), max_abs_diff(r.pooled, n.pooled)});

        const Vec ctx = random_unit(C, rng), v = random_vec(C, rng, 0.5);
        const Matrix U = random_matrix(L, C, rng, 0.5);
        const AttentionResult rc = context_attend(x, ctx, ContextAttentionParams{v, U});
        const NaiveAttention nc = naive_context_attend(x, ctx, v, U);
        worst_ctx = std::max({worst_ctx, max_abs_diff(rc.weights, nc.weights), max_abs_diff(rc.pooled, nc.pooled)});
    }
    for (int trial = 0; trial < 500; ++trial) {
        const RetrievalCase rc = random_retrieval_case(rng);
        const ShopIndex idx = build_index(rc.shops, rc.model);
        const std::size_t k = uniform_size(1, rc.shops.size() + 3, rng);
        const RankedList got = initial_search(idx, rc.query, rc.model, k);
        const RankedList want = naive_initial_search(rc, k);
        if (ids_of(got) != ids_of(want)) {
            ++ranking_mismatches;
            continue;
        }
        for (std::size_t i = 0; i < got.size(); ++i) {
            worst_dist = std::max(worst_dist, std::abs(got[i].distance - want[i].distance));
            if (i > 0 && got[i].distance == got[i - 1].distance) ++ties_seen;
        }
    }
    Outcome o;
    o.pass = worst_tag <= 1e-9 && worst_ctx <= 1e-9 && worst_dist <= 1e-9 && ranking_mismatches == 0;
    o.detail = fmt("500 instances each; max diff tag %.1e, ctx %.1e, search %.1e; ", worst_tag, worst_ctx, worst_dist) +
               std::to_string(ranking_mismatches) + " ranking mismatches, " + std::to_string(ties_seen) +
               " exact ties resolved";
    return o;
}

Outcome loss_behavior() {
    Outcome o;
    // Unit vectors with equal positive and negative distance.
    const TripleEmbeddings e{Vec{1.0, 0.0}, Vec{1.0, 0.0}, Vec{0.0, 1.0}, Vec{0.0, -1.0}};
    const double at_margin = triplet_loss(e, 0.5);

    std::mt19937_64 rng(4);
    std::size_t nonzero = 0;
    for (int trial = 0; trial < 300; ++trial) {
        ModelConfig mc;
        mc.locations = uniform_size(1, 6, rng);
        mc.channels = uniform_size(1, 5, rng);
        mc.tags = uniform_size(1, 4, rng);
        mc.raw_dim = uniform_size(1, 5, rng);
        mc.variant = static_cast<Variant>(trial % 3);
        const Model m = init_model(mc, rng());
        const Matrix a = random_matrix(mc.locations, mc.raw_dim, rng), p = random_matrix(mc.locations, mc.raw_dim, rng),
                     q = random_matrix(mc.locations, mc.raw_dim, rng);
        const TagVector pt = random_tags(mc.tags, rng), qt = random_tags(mc.tags, rng);
        const TripleInput in{a, p, q, pt, qt};
        const TripleForward f = forward_triple(in, m, 0.0);
        const double gap = distance(f.embeddings.o_p, f.embeddings.p) - distance(f.embeddings.o_q, f.embeddings.q);
        const TripleBackward b = backward_triple(in, m, -gap - 0.05);
        for (double g : flatten(b.grads)) nonzero += g != 0.0;
        nonzero += b.loss != 0.0;
    }

    std::string curve;
    bool descended = true;
    for (Variant v : {Variant::YNet, Variant::TagYNet, Variant::CtxYNet}) {
        const FixedBatchRun run = fixed_batch_descent(v, 100, 0.1);
        descended = descended && run.initial_loss > 0 && run.final_loss < 0.5 * run.initial_loss;
        curve += std::string(variant_name(v)) + fmt(" %.4f->%.4f ", run.initial_loss, run.final_loss);
    }
    o.pass = at_margin == 0.5 && nonzero == 0 && descended;
    o.detail = fmt("loss(d_p=d_q, 0.5) = %.17g; ", at_margin) + std::to_string(nonzero) +
               " nonzero inactive-hinge gradients over 300 triples; 100 steps: " + curve;
    return o;
}

struct LadderResult {
    double ynet_p1 = 0, ynet_p5 = 0;
    double tag_p1 = 0, tag_p5 = 0;
    double ctx_initial_p1 = 0, ctx_initial_p5 = 0;
    double ctx_rerank_p1 = 0, ctx_rerank_p5 = 0;
    double oracle = 0;
    double seconds = 0;
};

LadderResult run_ladder() {
    const auto t0 = std::chrono::steady_clock::now();
    const SyntheticData data = synthesize(SyntheticSpec{});
    TrainConfig cfg;
    cfg.base_lr = 0.1;
    cfg.epochs = 70;
    cfg.max_steps = 500;
    const ModelConfig mc = data.spec.model_config();

    LadderResult r;
    r.oracle = data.oracle_accuracy;
    std::optional<Checkpoint> prev;
    for (Variant v : {Variant::YNet, Variant::TagYNet, Variant::CtxYNet}) {
        StageResult s = train_stage(v, data.train, cfg, prev, mc);
        const Model& m = s.checkpoint.model;
        const ShopIndex idx = build_index(data.test.shops, m);
        const Searcher searcher(idx, m);
        QueryResults initial, reranked;
        for (const Item& u : data.test.users) {
            initial[u.id] = searcher.initial_search(u.raw, kDefaultRerankDepth);
            if (v == Variant::CtxYNet) reranked[u.id] = searcher.rerank(u.raw, initial[u.id]);
        }
        auto p = [&](const QueryResults& q, std::size_t k) { return precision_at_k(q, data.ground_truth, idx, k).value; };
        if (v == Variant::YNet) {
            r.ynet_p1 = p(initial, 1);
            r.ynet_p5 = p(initial, 5);
        } else if (v == Variant::TagYNet) {
            r.tag_p1 = p(initial, 1);
            r.tag_p5 = p(initial, 5);
        } else {
            r.ctx_initial_p1 = p(initial, 1);
            r.ctx_initial_p5 = p(initial, 5);
            r.ctx_rerank_p1 = p(reranked, 1);
            r.ctx_rerank_p5 = p(reranked, 5);
        }
        prev = std::move(s.checkpoint);
    }
    r.seconds = seconds_since(t0);
    return r;
}

Outcome ablation_ladder() {
    const LadderResult r = run_ladder();
    const bool a = r.tag_p1 >= r.ynet_p1 + 0.05;
    const bool b = r.ctx_rerank_p5 >= r.tag_p5;
    const bool c = r.tag_p1 >= 0.6;
    Outcome o;
    o.pass = a && b && c && r.seconds < 300.0;
    o.detail = fmt("YNet P@1 %.4f P@5 %.4f; ", r.ynet_p1, r.ynet_p5) + fmt("TagYNet P@1 %.4f P@5 %.4f; ", r.tag_p1, r.tag_p5) +
               fmt("CtxYNet initial P@1 %.4f P@5 %.4f, ", r.ctx_initial_p1, r.ctx_initial_p5) +
               fmt("re-ranked P@1 %.4f P@5 %.4f; ", r.ctx_rerank_p1, r.ctx_rerank_p5) +
               fmt("oracle %.4f; ", r.oracle) + "(a) " + (a ? "ok" : "MISSED") + " (b) " + (b ? "ok" : "MISSED") +
               " (c) " + (c ? "ok" : "MISSED") + fmt("; %.1fs", r.seconds);
    return o;
}

Outcome retrieval_exactness() {
    std::mt19937_64 rng(606);
    std::size_t not_permutation = 0, unsorted = 0, nonmonotone = 0, rerank_changed = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const RetrievalCase rc = random_retrieval_case(rng);
        const ShopIndex idx = build_index(rc.shops, rc.model);
        const std::size_t depth = uniform_size(1, rc.shops.size(), rng);
        const Searcher searcher(idx, rc.model);

        QueryResults init, re;
        GroundTruth gt;
        for (std::uint64_t q = 0; q < 4; ++q) {
            const Matrix query = q == 0 ? rc.query : random_matrix(rc.query.rows(), rc.query.cols(), rng);
            init[q] = searcher.initial_search(query, depth);
            re[q] = searcher.rerank(query, init[q]);
            gt[q] = uniform_size(1, 10, rng);

            auto a = ids_of(init[q]), b = ids_of(re[q]);
            std::sort(a.begin(), a.end());
            std::sort(b.begin(), b.end());
            if (a != b) ++not_permutation;
            if (!std::is_sorted(re[q].begin(), re[q].end(), hit_before)) ++unsorted;
        }
        double prev = 0;
        for (std::size_t k = 1; k <= depth + 2; ++k) {
            const double p = precision_at_k(re, gt, idx, k).value;
            if (p < prev) ++nonmonotone;
            prev = p;
        }
        if (precision_at_k(init, gt, idx, depth).value != precision_at_k(re, gt, idx, depth).value) ++rerank_changed;
    }
    Outcome o;
    o.pass = not_permutation + unsorted + nonmonotone + rerank_changed == 0;
    o.detail = "200 cases x 4 queries; " + std::to_string(not_permutation) + " non-permutations, " +
               std::to_string(unsorted) + " unsorted, " + std::to_string(nonmonotone) + " P@K decreases, " +
               std::to_string(rerank_changed) + " P@|candidates| changes";
    return o;
}

Outcome protocol_constants() {
    const TrainConfig cfg;
    const StageMargins m;
    Outcome o;
    o.pass = kDefaultRerankDepth == 256 && m.for_stage(Variant::YNet) == 0.3 && m.for_stage(Variant::TagYNet) == 0.3 &&
             m.for_stage(Variant::CtxYNet) == 0.5 && lr_at(0, cfg) == 0.01 &&
             std::abs(lr_at(30, cfg) - 0.001) <= 1e-18;
    o.detail = "K=" + std::to_string(kDefaultRerankDepth) +
               fmt(", margins %.1f/%.1f/%.1f", m.ynet, m.tag, m.ctx) +
               fmt(", lr_at(0)=%.6g, lr_at(30)=%.6g", lr_at(0, cfg), lr_at(30, cfg));
    return o;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

int run(const std::string& cmd) {
    const int rc = std::system((cmd + " > /dev/null 2>&1").c_str());
    return rc == -1 ? -1 : WEXITSTATUS(rc);
}

Outcome determinism(const std::string& xret, const fs::path& work) {
    Outcome o;
    if (xret.empty()) {
        o.pass = false;
        o.detail = "no --xret executable given";
        return o;
    }
    const std::vector<std::string> artifacts = {"model/ynet.ckpt", "model/tag.ckpt", "model/ctx.ckpt",
                                                "model/metrics.tsv", "index.bin", "results.tsv", "eval.txt"};
    std::vector<std::string> runs[2];
    for (int i = 0; i < 2; ++i) {
        const fs::path dir = work / ("run" + std::to_string(i));
        fs::remove_all(dir);
        fs::create_directories(dir);
        const std::string d = dir.string();
        const std::string x = "\"" + xret + "\"";
        const std::vector<std::string> steps = {
            x + " gen-data --out " + d + "/data --seed 7",
            x + " train --data " + d + "/data/train.tsv --out " + d +
                "/model --seed 1 --lr 0.1 --epochs 70 --max-steps 500",
            x + " index --ckpt " + d + "/model/ctx.ckpt --manifest " + d + "/data/test.tsv --out " + d + "/index.bin",
            x + " query --ckpt " + d + "/model/ctx.ckpt --index " + d + "/index.bin --manifest " + d +
                "/data/test.tsv --k 20 --out " + d + "/results.tsv",
            x + " eval --index " + d + "/index.bin --gt " + d + "/data/ground_truth.tsv --results " + d +
                "/results.tsv --k 1,5,10,20 > " + d + "/eval.txt",
        };
        for (const auto& s : steps) {
            // The eval step redirects itself; keep its stdout.
            const bool keep = s.find("> ") != std::string::npos;
            const int rc = keep ? WEXITSTATUS(std::system(s.c_str())) : run(s);
            if (rc != 0) {
                o.pass = false;
                o.detail = "command failed (" + std::to_string(rc) + "): " + s;
                return o;
            }
        }
        for (const auto& a : artifacts) runs[i].push_back(read_bytes(dir / a));
    }
    std::size_t differing = 0, empty = 0;
    for (std::size_t k = 0; k < artifacts.size(); ++k) {
        differing += runs[0][k] != runs[1][k];
        empty += runs[0][k].empty();
    }
    o.pass = differing == 0 && empty == 0;
    o.detail = std::to_string(artifacts.size()) + " artifacts compared, " + std::to_string(differing) +
               " differ, " + std::to_string(empty) + " empty";
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria runner"};
    std::string work = (fs::temp_directory_path() / "xret_acceptance").string();
    std::string xret;
    std::vector<int> only;
    app.add_option("--work-dir", work, "Scratch directory for the pipeline runs");
    app.add_option("--xret", xret, "Path to the xret executable");
    app.add_option("--only", only, "Run only these criteria");
    CLI11_PARSE(app, argc, argv);
    fs::create_directories(work);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient correctness", gradient_correctness},
        {"attention invariants", attention_invariants},
        {"oracle equivalence", oracle_equivalence},
        {"loss behavior", loss_behavior},
        {"synthetic ablation ladder", ablation_ladder},
        {"retrieval exactness", retrieval_exactness},
        {"protocol constants", protocol_constants},
        {"pipeline determinism", [&] { return determinism(xret, work); }},
    };

    int failures = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s  %d %-26s %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
        std::fflush(stdout);
    }
    return failures == 0 ? 0 : 1;
}
