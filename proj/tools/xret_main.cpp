// xret: command-line driver for data generation, staged training, indexing,
// two-stage querying, evaluation and gradient checking.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "xret/dataio.hpp"
#include "xret/errors.hpp"
#include "xret/gradcheck.hpp"
#include "xret/model.hpp"
#include "xret/retrieval.hpp"
#include "xret/training.hpp"

namespace fs = std::filesystem;
using namespace xret;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

struct GenDataArgs {
    std::string out;
    bool force = false;
    SyntheticSpec spec;
};

struct TrainArgs {
    std::string data;
    std::string vocab;
    std::string out;
    std::string init;
    std::string stages = "ynet,tag,ctx";
    std::size_t channels = 16;
    bool euclidean = false;
    TrainConfig cfg;
};

struct IndexArgs {
    std::string ckpt;
    std::string manifest;
    std::string vocab;
    std::string out;
};

struct QueryArgs {
    std::string ckpt;
    std::string index;
    std::string manifest;
    std::string vocab;
    std::string out;
    std::vector<std::uint64_t> ids;
    std::size_t k = 20;
    std::size_t depth = kDefaultRerankDepth;
    bool no_rerank = false;
    std::size_t threads = 1;
};

struct EvalArgs {
    std::string ckpt;
    std::string index;
    std::string manifest;
    std::string vocab;
    std::string ground_truth;
    std::string results;
    std::vector<std::size_t> ks{1, 5, 10, 20};
    std::size_t depth = kDefaultRerankDepth;
    bool no_rerank = false;
    std::size_t threads = 1;
};

struct GradCheckArgs {
    GradCheckOptions opts;
    bool verbose = false;
};

int cmd_gen_data(const GenDataArgs& a) {
    a.spec.validate();
    if (fs::exists(a.out)) {
        if (!a.force) throw UsageError("output directory " + a.out + " exists (use --force to overwrite)");
        fs::remove_all(a.out);
    }
    const SyntheticSummary s = generate_synthetic(a.spec, a.out);
    std::cout << "train_records\t" << s.train_records << "\ntest_records\t" << s.test_records
              << "\noracle_accuracy\t" << fmt6(s.oracle_accuracy) << '\n';
    return kExitOk;
}

std::vector<Variant> parse_stages(const std::string& list) {
    std::vector<Variant> stages;
    std::stringstream ss(list);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        try {
            stages.push_back(parse_variant(tok));
        } catch (const InvalidArgument& e) {
            throw UsageError(e.what());
        }
    }
    if (stages.empty()) throw UsageError("--stages is empty");
    for (std::size_t i = 1; i < stages.size(); ++i) {
        if (stages[i] <= stages[i - 1]) throw UsageError("--stages must follow ynet,tag,ctx order");
    }
    return stages;
}

std::string stage_file(Variant v) {
    switch (v) {
        case Variant::YNet: return "ynet.ckpt";
        case Variant::TagYNet: return "tag.ckpt";
        case Variant::CtxYNet: return "ctx.ckpt";
    }
    return "model.ckpt";
}

// L and raw_dim come from the data; T from the vocabulary.
ModelConfig config_from_manifest(const Manifest& m, std::size_t channels) {
    const Matrix first = load_feature_map(m.resolve(m.records.front()));
    return ModelConfig{first.rows(), channels, m.vocab.size(), first.cols(), Variant::YNet};
}

int cmd_train(TrainArgs a) {
    const auto stages = parse_stages(a.stages);
    a.cfg.distance = a.euclidean ? DistanceKind::Euclidean : DistanceKind::Squared;
    a.cfg.validate();

    const Manifest manifest = load_manifest(a.data, a.vocab);
    ModelConfig config = config_from_manifest(manifest, a.channels);
    std::optional<Checkpoint> current;
    if (!a.init.empty()) {
        current = load_checkpoint(a.init);
        config.channels = current->model.config.channels;
    }
    config.validate();
    const Dataset data = load_dataset(manifest, config);

    fs::create_directories(a.out);
    std::ofstream metrics(fs::path(a.out) / "metrics.tsv", std::ios::trunc);
    for (Variant stage : stages) {
        StageResult r = train_stage(stage, data, a.cfg, current, config, [&](const EpochStats& e) {
            const std::string line = format_metrics_line(e);
            metrics << line << '\n';
            std::cout << line << '\n';
        });
        const std::string path = (fs::path(a.out) / stage_file(stage)).string();
        save_checkpoint(path, r.checkpoint);
        std::cerr << variant_name(stage) << ": " << r.steps << " steps -> " << path << '\n';
        current = std::move(r.checkpoint);
    }
    return kExitOk;
}

std::vector<Item> load_domain(const Manifest& m, const ModelConfig& config, Domain domain) {
    Dataset d = load_dataset(m, config);
    return domain == Domain::Shop ? std::move(d.shops) : std::move(d.users);
}

int cmd_index(const IndexArgs& a) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Manifest manifest = load_manifest(a.manifest, a.vocab);
    const auto shops = load_domain(manifest, ckpt.model.config, Domain::Shop);
    const ShopIndex index = build_index(shops, ckpt.model);
    save_index(a.out, index);
    std::cout << "entries\t" << index.size() << "\nfingerprint\t" << to_hex(index.model_fingerprint) << '\n';
    return kExitOk;
}

QueryResults run_queries(const Searcher& searcher, const std::vector<Item>& users, const std::vector<std::uint64_t>& ids,
                         std::size_t depth, std::size_t k, bool rerank) {
    QueryResults results;
    for (const auto& u : users) {
        if (!ids.empty() && std::find(ids.begin(), ids.end(), u.id) == ids.end()) continue;
        RankedList r = searcher.search(u.raw, depth, rerank);
        if (r.size() > k) r.resize(k);
        results.emplace(u.id, std::move(r));
    }
    return results;
}

int cmd_query(const QueryArgs& a) {
    if (a.k == 0) throw UsageError("--k must be >= 1");
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const ShopIndex index = load_index(a.index);
    const Manifest manifest = load_manifest(a.manifest, a.vocab);
    const auto users = load_domain(manifest, ckpt.model.config, Domain::User);
    for (std::uint64_t id : a.ids) {
        if (std::none_of(users.begin(), users.end(), [&](const Item& u) { return u.id == id; })) {
            throw InvalidArgument("query id " + std::to_string(id) + " is not a user record in " + a.manifest);
        }
    }
    const Searcher searcher(index, ckpt.model, a.threads);
    const QueryResults results = run_queries(searcher, users, a.ids, std::max(a.depth, a.k), a.k, !a.no_rerank);
    if (a.out.empty()) {
        write_results(std::cout, results);
    } else {
        std::ofstream out(a.out, std::ios::trunc);
        if (!out) throw IoError("cannot write " + a.out);
        write_results(out, results);
    }
    return kExitOk;
}

int cmd_eval(const EvalArgs& a) {
    const ShopIndex index = load_index(a.index);
    const GroundTruth truth = load_ground_truth(a.ground_truth);
    QueryResults results;
    if (!a.results.empty()) {
        results = read_results(a.results);
    } else {
        if (a.ckpt.empty() || a.manifest.empty()) throw UsageError("eval needs --results or both --ckpt and --manifest");
        const Checkpoint ckpt = load_checkpoint(a.ckpt);
        const Manifest manifest = load_manifest(a.manifest, a.vocab);
        const auto users = load_domain(manifest, ckpt.model.config, Domain::User);
        const Searcher searcher(index, ckpt.model, a.threads);
        std::size_t max_k = 1;
        for (std::size_t k : a.ks) max_k = std::max(max_k, k);
        results = run_queries(searcher, users, {}, std::max(a.depth, max_k), max_k, !a.no_rerank);
    }
    PrecisionAtK last;
    for (std::size_t k : a.ks) {
        last = precision_at_k(results, truth, index, k);
        std::cout << "P@" << k << '\t' << fmt6(last.value) << '\n';
    }
    std::cout << "queries\t" << last.queries << '\n';
    if (last.excluded) std::cerr << "warning: " << last.excluded << " queries without ground truth excluded\n";
    return kExitOk;
}

int cmd_grad_check(const GradCheckArgs& a) {
    const GradCheckReport report = run_gradient_check(a.opts);
    std::size_t failed = 0;
    double worst = 0;
    for (const auto& c : report.cases) {
        worst = std::max(worst, c.max_rel_error);
        if (!c.passed) ++failed;
        if (a.verbose || !c.passed) {
            std::cout << variant_name(c.config.variant) << "\tL=" << c.config.locations << "\tC=" << c.config.channels
                      << "\tT=" << c.config.tags << "\traw=" << c.config.raw_dim << "\tmax_rel=" << fmt6(c.max_rel_error)
                      << "\tmax_abs=" << fmt6(c.max_abs_error) << '\t' << (c.passed ? "ok" : "FAIL " + c.worst_tensor)
                      << '\n';
        }
    }
    std::cout << "cases\t" << report.cases.size() << "\nfailed\t" << failed << "\nmax_rel_error\t" << fmt6(worst) << '\n';
    return report.passed ? kExitOk : kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-domain image retrieval with tag and context attention"};
    app.set_config("--config", "", "key=value configuration file (flags override)");
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
    gen_cmd->add_option("--out", gen.out, "Output directory")->required();
    gen_cmd->add_flag("--force", gen.force, "Overwrite an existing output directory");
    gen_cmd->add_option("--seed", gen.spec.seed, "Random seed");
    gen_cmd->add_option("--products", gen.spec.n_products, "Training products");
    gen_cmd->add_option("--heldout-products", gen.spec.n_heldout_products, "Held-out evaluation products");
    gen_cmd->add_option("--user-per-product", gen.spec.user_per_product, "User images per product");
    gen_cmd->add_option("--shop-per-product", gen.spec.shop_per_product, "Shop images per product");
    gen_cmd->add_option("--locations", gen.spec.locations, "Spatial locations L");
    gen_cmd->add_option("--channels", gen.spec.channels, "Model channels C");
    gen_cmd->add_option("--tags", gen.spec.tags, "Tag vocabulary size T");
    gen_cmd->add_option("--raw-dim", gen.spec.raw_dim, "Raw feature dimension");
    gen_cmd->add_option("--signal-locations", gen.spec.signal_locations, "Locations carrying the product");
    gen_cmd->add_option("--noise-sigma", gen.spec.noise_sigma, "User-image Gaussian noise");
    bool no_distractors = false;
    gen_cmd->add_flag("--no-distractors", no_distractors, "Leave non-signal locations empty");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Train one stage or the full curriculum");
    train_cmd->add_option("--data", train.data, "Training manifest")->required();
    train_cmd->add_option("--vocab", train.vocab, "Tag vocabulary (default: tags.tsv next to the manifest)");
    train_cmd->add_option("--out", train.out, "Output directory for checkpoints and metrics.tsv")->required();
    train_cmd->add_option("--init", train.init, "Initial checkpoint");
    train_cmd->add_option("--stages", train.stages, "Comma-separated stages: ynet,tag,ctx");
    train_cmd->add_option("--channels", train.channels, "Feature channels C");
    train_cmd->add_option("--epochs", train.cfg.epochs, "Epochs per stage");
    train_cmd->add_option("--max-steps", train.cfg.max_steps, "Step cap per stage (0 = none)");
    train_cmd->add_option("--batch-size", train.cfg.batch_size, "Triples per mini-batch");
    train_cmd->add_option("--lr", train.cfg.base_lr, "Initial learning rate");
    train_cmd->add_option("--lr-decay", train.cfg.lr_decay, "Learning-rate decay factor");
    train_cmd->add_option("--decay-every", train.cfg.decay_every, "Epochs between decays");
    train_cmd->add_option("--momentum", train.cfg.momentum, "SGD momentum");
    train_cmd->add_option("--margin-ynet", train.cfg.margins.ynet, "YNet margin");
    train_cmd->add_option("--margin-tag", train.cfg.margins.tag, "TagYNet margin");
    train_cmd->add_option("--margin-ctx", train.cfg.margins.ctx, "CtxYNet margin");
    train_cmd->add_option("--seed", train.cfg.seed, "Random seed");
    train_cmd->add_option("--threads", train.cfg.threads, "Worker threads per batch");
    train_cmd->add_flag("--euclidean", train.euclidean, "Use plain instead of squared Euclidean distance");

    IndexArgs index;
    auto* index_cmd = app.add_subcommand("index", "Embed shop images into an index file");
    index_cmd->add_option("--ckpt", index.ckpt, "Model checkpoint")->required();
    index_cmd->add_option("--manifest", index.manifest, "Manifest with shop records")->required();
    index_cmd->add_option("--vocab", index.vocab, "Tag vocabulary");
    index_cmd->add_option("--out", index.out, "Index output path")->required();

    QueryArgs query;
    auto* query_cmd = app.add_subcommand("query", "Run two-stage search for user images");
    query_cmd->add_option("--ckpt", query.ckpt, "Model checkpoint")->required();
    query_cmd->add_option("--index", query.index, "Index file")->required();
    query_cmd->add_option("--manifest", query.manifest, "Manifest with user records")->required();
    query_cmd->add_option("--vocab", query.vocab, "Tag vocabulary");
    query_cmd->add_option("--id", query.ids, "Restrict to these query ids");
    query_cmd->add_option("--k", query.k, "Results per query");
    query_cmd->add_option("--depth", query.depth, "Initial candidates to re-rank");
    query_cmd->add_flag("--no-rerank", query.no_rerank, "Skip context re-ranking");
    query_cmd->add_option("--threads", query.threads, "Threads for candidate scoring");
    query_cmd->add_option("--out", query.out, "Results file (default stdout)");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "Compute P@K");
    eval_cmd->add_option("--index", eval.index, "Index file")->required();
    eval_cmd->add_option("--gt", eval.ground_truth, "Ground truth TSV")->required();
    eval_cmd->add_option("--results", eval.results, "Precomputed results file");
    eval_cmd->add_option("--ckpt", eval.ckpt, "Model checkpoint (when searching)");
    eval_cmd->add_option("--manifest", eval.manifest, "Query manifest (when searching)");
    eval_cmd->add_option("--vocab", eval.vocab, "Tag vocabulary");
    eval_cmd->add_option("--k", eval.ks, "Cutoffs")->delimiter(',');
    eval_cmd->add_option("--depth", eval.depth, "Initial candidates to re-rank");
    eval_cmd->add_flag("--no-rerank", eval.no_rerank, "Skip context re-ranking");
    eval_cmd->add_option("--threads", eval.threads, "Threads for candidate scoring");

    GradCheckArgs grad;
    auto* grad_cmd = app.add_subcommand("grad-check", "Compare analytic gradients with finite differences");
    grad_cmd->add_option("--trials", grad.opts.trials, "Random configurations");
    grad_cmd->add_option("--seed", grad.opts.seed, "Random seed");
    grad_cmd->add_option("--step", grad.opts.step, "Finite-difference step");
    grad_cmd->add_flag("--verbose", grad.verbose, "Print every case");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: usage: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        if (*gen_cmd) {
            gen.spec.distractors = !no_distractors;
            return cmd_gen_data(gen);
        }
        if (*train_cmd) return cmd_train(train);
        if (*index_cmd) return cmd_index(index);
        if (*query_cmd) return cmd_query(query);
        if (*eval_cmd) return cmd_eval(eval);
        if (*grad_cmd) return cmd_grad_check(grad);
    } catch (const UsageError& e) {
        std::cerr << "error: usage: " << e.what() << '\n';
        return kExitUsage;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
        return kExitUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.kind() << ": " << e.what() << '\n';
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: runtime: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}
