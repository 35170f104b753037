#include "xret/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "binio.hpp"
#include "xret/errors.hpp"

namespace fs = std::filesystem;

namespace xret {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(sep, start);
        out.push_back(s.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
std::optional<T> parse_uint(const std::string& s) {
    T v{};
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc{} || ptr != end || s.empty()) return std::nullopt;
    return v;
}

// Returns false for lines that carry no record.
bool significant(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return !line.empty() && line.front() != '#';
}

std::string domain_name(Domain d) { return d == Domain::User ? "user" : "shop"; }

}  // namespace

std::string Manifest::resolve(const ManifestRecord& r) const {
    const fs::path p(r.path);
    if (p.is_absolute() || base_dir.empty()) return p.string();
    return (fs::path(base_dir) / p).string();
}

TagVocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tag vocabulary " + path);
    TagVocabulary vocab;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!significant(line)) continue;
        const auto fields = split(line, '\t');
        if (fields.size() != 2) throw ManifestError(path, lineno, 0, "expected 2 tab-separated fields");
        const auto id = parse_uint<std::size_t>(fields[0]);
        if (!id) throw ManifestError(path, lineno, 1, "bad tag id '" + fields[0] + "'");
        if (*id != vocab.names.size()) {
            throw ManifestError(path, lineno, 1,
                                "tag ids must be consecutive from 0, expected " + std::to_string(vocab.names.size()));
        }
        vocab.names.push_back(fields[1]);
    }
    if (vocab.names.empty()) throw ManifestError(path, lineno, 0, "empty tag vocabulary");
    return vocab;
}

void write_vocabulary(const std::string& path, const TagVocabulary& vocab) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (std::size_t i = 0; i < vocab.names.size(); ++i) out << i << '\t' << vocab.names[i] << '\n';
}

Manifest load_manifest(const std::string& path, const std::string& vocab_path, bool check_files) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path);

    Manifest m;
    m.base_dir = fs::path(path).parent_path().string();
    m.vocab = load_vocabulary(vocab_path.empty() ? (fs::path(m.base_dir) / "tags.tsv").string() : vocab_path);

    std::set<std::uint64_t> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!significant(line)) continue;
        const auto f = split(line, '\t');
        if (f.size() < 4 || f.size() > 5) {
            throw ManifestError(path, lineno, 0, "expected 4 or 5 tab-separated fields, found " + std::to_string(f.size()));
        }
        ManifestRecord r;
        r.line = lineno;
        const auto id = parse_uint<std::uint64_t>(f[0]);
        if (!id) throw ManifestError(path, lineno, 1, "bad item id '" + f[0] + "'");
        r.id = *id;
        if (!seen.insert(r.id).second) throw ManifestError(path, lineno, 1, "duplicate item id " + f[0]);

        if (f[1] == "user") {
            r.domain = Domain::User;
        } else if (f[1] == "shop") {
            r.domain = Domain::Shop;
        } else {
            throw ManifestError(path, lineno, 2, "domain must be 'user' or 'shop', found '" + f[1] + "'");
        }

        const auto product = parse_uint<std::uint64_t>(f[2]);
        if (!product) throw ManifestError(path, lineno, 3, "bad product id '" + f[2] + "'");
        r.product = *product;

        if (f[3].empty()) throw ManifestError(path, lineno, 4, "empty feature path");
        r.path = f[3];

        if (f.size() == 5 && !f[4].empty()) {
            for (const auto& tok : split(f[4], ',')) {
                const auto tag = parse_uint<std::size_t>(tok);
                if (!tag) throw ManifestError(path, lineno, 5, "bad tag id '" + tok + "'");
                if (*tag >= m.vocab.size()) {
                    throw ManifestError(path, lineno, 5,
                                        "tag id " + tok + " >= vocabulary size " + std::to_string(m.vocab.size()));
                }
                r.tags.push_back(*tag);
            }
        }
        if (check_files && !fs::exists(m.resolve(r))) {
            throw ManifestError(path, lineno, 4, "feature file not found: " + m.resolve(r));
        }
        m.records.push_back(std::move(r));
    }
    if (m.records.empty()) throw ManifestError(path, lineno, 0, "no records");
    return m;
}

void write_manifest(const std::string& path, const Manifest& manifest) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& r : manifest.records) {
        out << r.id << '\t' << domain_name(r.domain) << '\t' << r.product << '\t' << r.path << '\t';
        for (std::size_t i = 0; i < r.tags.size(); ++i) out << (i ? "," : "") << r.tags[i];
        out << '\n';
    }
}

void write_feature_map(const std::string& path, const Matrix& raw) {
    binio::Writer w;
    w.magic("XFMP");
    w.u32(kFeatureMapVersion);
    w.u32(static_cast<std::uint32_t>(raw.rows()));
    w.u32(static_cast<std::uint32_t>(raw.cols()));
    for (double x : raw.flat()) w.f32(static_cast<float>(x));
    binio::write_file(path, w.buffer());
}

Matrix load_feature_map(const std::string& path) {
    const auto bytes = binio::read_file(path);
    binio::Reader r(bytes);
    r.expect_magic("XFMP");
    const std::uint32_t version = r.u32();
    if (version != kFeatureMapVersion) {
        throw ParseError(path + ": unsupported feature map version " + std::to_string(version), 4);
    }
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows == 0 || cols == 0) throw ParseError(path + ": empty feature map header", 8);
    const std::size_t expected = static_cast<std::size_t>(rows) * cols * 4;
    if (r.remaining() != expected) {
        throw ParseError(path + ": payload is " + std::to_string(r.remaining()) + " bytes, expected " +
                             std::to_string(expected) + " for " + std::to_string(rows) + "x" + std::to_string(cols),
                         r.offset());
    }
    Matrix m(rows, cols);
    for (double& x : m.flat()) x = static_cast<double>(r.f32());
    return m;
}

Matrix load_feature_map(const std::string& path, const ModelConfig& config) {
    Matrix m = load_feature_map(path);
    if (m.rows() != config.locations || m.cols() != config.raw_dim) {
        throw DimensionMismatch(path + ": feature map is " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) +
                                " (L x raw_dim), model expects " + std::to_string(config.locations) + "x" +
                                std::to_string(config.raw_dim));
    }
    return m;
}

void write_ground_truth(const std::string& path, const GroundTruth& gt) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    for (const auto& [user, product] : gt) out << user << '\t' << product << '\n';
}

GroundTruth load_ground_truth(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open ground truth " + path);
    GroundTruth gt;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!significant(line)) continue;
        const auto f = split(line, '\t');
        if (f.size() != 2) throw ManifestError(path, lineno, 0, "expected user_id<TAB>product_id");
        const auto user = parse_uint<std::uint64_t>(f[0]);
        const auto product = parse_uint<std::uint64_t>(f[1]);
        if (!user) throw ManifestError(path, lineno, 1, "bad user id '" + f[0] + "'");
        if (!product) throw ManifestError(path, lineno, 2, "bad product id '" + f[1] + "'");
        if (!gt.emplace(*user, *product).second) throw ManifestError(path, lineno, 1, "duplicate user id " + f[0]);
    }
    return gt;
}

Dataset load_dataset(const Manifest& manifest, const ModelConfig& config) {
    if (manifest.vocab.size() != config.tags) {
        throw DimensionMismatch("manifest vocabulary has " + std::to_string(manifest.vocab.size()) +
                                " tags, model expects " + std::to_string(config.tags));
    }
    Dataset d;
    d.tag_count = config.tags;
    for (const auto& r : manifest.records) {
        Item item{r.id, r.product, load_feature_map(manifest.resolve(r), config),
                  TagVector::from_ids(config.tags, r.tags)};
        (r.domain == Domain::User ? d.users : d.shops).push_back(std::move(item));
    }
    return d;
}

void SyntheticSpec::validate() const {
    if (n_products < 2) throw InvalidArgument("SyntheticSpec: n_products must be >= 2");
    if (user_per_product == 0 || shop_per_product == 0) {
        throw InvalidArgument("SyntheticSpec: user_per_product and shop_per_product must be >= 1");
    }
    if (locations == 0 || channels == 0 || raw_dim == 0) {
        throw InvalidArgument("SyntheticSpec: locations, channels and raw_dim must be >= 1");
    }
    if (tags < 2) throw InvalidArgument("SyntheticSpec: tags must be >= 2");
    if (signal_locations == 0 || signal_locations > locations) {
        throw InvalidArgument("SyntheticSpec: signal_locations must be in [1, locations]");
    }
    if (!(noise_sigma >= 0.0)) throw InvalidArgument("SyntheticSpec: noise_sigma must be >= 0");
}

ModelConfig SyntheticSpec::model_config(Variant variant) const {
    return ModelConfig{locations, channels, tags, raw_dim, variant};
}

namespace {

// Tags split into two attribute types (category, style); every product has
// one of each. A prototype is the sum of its two attribute centroids plus a
// product-specific deviation, so tags identify the attribute group and the
// deviation identifies the product.
struct PrototypeModel {
    std::size_t categories = 0;
    std::vector<Vec> centroids;  // index = tag id
};

constexpr double kCentroidStd = 0.7;
constexpr double kDeviationStd = 0.7;
// User-image background is lower-energy than any product.
constexpr double kClutterStd = 0.4;

Vec gaussian(std::size_t n, double std, std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std);
    Vec v(n);
    for (double& x : v) x = dist(rng);
    return v;
}

Vec clutter(std::size_t raw_dim, std::mt19937_64& rng) { return gaussian(raw_dim, kClutterStd, rng); }

void store_row(Matrix& m, std::size_t row, const Vec& v) {
    // Round through float32 so on-disk and in-memory copies agree.
    auto r = m.row(row);
    for (std::size_t i = 0; i < v.size(); ++i) r[i] = static_cast<double>(static_cast<float>(v[i]));
}

}  // namespace

SyntheticData synthesize(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData out;
    out.spec = spec;
    std::mt19937_64 rng(spec.seed);

    PrototypeModel pm;
    pm.categories = spec.tags / 2;
    for (std::size_t t = 0; t < spec.tags; ++t) {
        out.vocab.names.push_back(t < pm.categories ? "category_" + std::to_string(t)
                                                    : "style_" + std::to_string(t - pm.categories));
        pm.centroids.push_back(gaussian(spec.raw_dim, kCentroidStd, rng));
    }

    // Shop images carry the product at a fixed set of locations.
    std::vector<std::size_t> order(spec.locations);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::size_t> shop_signal(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(spec.signal_locations));
    std::sort(shop_signal.begin(), shop_signal.end());

    const std::size_t total = spec.n_products + spec.n_heldout_products;
    std::uniform_int_distribution<std::size_t> cat(0, pm.categories - 1);
    std::uniform_int_distribution<std::size_t> sty(pm.categories, spec.tags - 1);
    std::vector<TagVector> product_tags;
    for (std::size_t k = 0; k < total; ++k) {
        const std::size_t c = cat(rng), s = sty(rng);
        Vec proto = gaussian(spec.raw_dim, kDeviationStd, rng);
        axpy(1.0, pm.centroids[c], proto);
        axpy(1.0, pm.centroids[s], proto);
        out.prototypes.push_back(std::move(proto));
        product_tags.push_back(TagVector::from_ids(spec.tags, {c, s}));
    }

    // Shop distractors are other products shown alongside (accessories);
    // user distractors are low-energy background clutter.
    std::uniform_int_distribution<std::size_t> other(0, total - 2);
    auto shop_distractor = [&](std::size_t k) {
        const std::size_t j = other(rng);
        return out.prototypes[j >= k ? j + 1 : j];
    };
    std::normal_distribution<double> noise(0.0, 1.0);

    std::uint64_t next_id = 1;
    for (std::size_t k = 0; k < total; ++k) {
        const std::uint64_t product = k + 1;
        const Vec& proto = out.prototypes[k];
        Dataset& target = k < spec.n_products ? out.train : out.test;

        for (std::size_t u = 0; u < spec.user_per_product; ++u) {
            std::vector<std::size_t> perm(spec.locations);
            std::iota(perm.begin(), perm.end(), 0);
            std::shuffle(perm.begin(), perm.end(), rng);
            Matrix raw(spec.locations, spec.raw_dim);
            for (std::size_t i = 0; i < spec.locations; ++i) {
                Vec v = i < spec.signal_locations ? proto
                        : spec.distractors        ? clutter(spec.raw_dim, rng)
                                                  : Vec(spec.raw_dim, 0.0);
                if (spec.noise_sigma > 0.0) {
                    for (double& x : v) x += spec.noise_sigma * noise(rng);
                }
                store_row(raw, perm[i], v);
            }
            const std::uint64_t id = next_id++;
            out.ground_truth[id] = product;
            target.users.push_back({id, product, std::move(raw), TagVector(spec.tags)});
        }
        for (std::size_t j = 0; j < spec.shop_per_product; ++j) {
            Matrix raw(spec.locations, spec.raw_dim);
            for (std::size_t l = 0; l < spec.locations; ++l) {
                const bool signal = std::binary_search(shop_signal.begin(), shop_signal.end(), l);
                store_row(raw, l,
                          signal              ? proto
                          : spec.distractors ? shop_distractor(k)
                                             : Vec(spec.raw_dim, 0.0));
            }
            target.shops.push_back({next_id++, product, std::move(raw), product_tags[k]});
        }
    }
    out.train.tag_count = out.test.tag_count = spec.tags;

    std::vector<Item> all_users = out.train.users;
    all_users.insert(all_users.end(), out.test.users.begin(), out.test.users.end());
    out.oracle_accuracy = nearest_prototype_accuracy(out.prototypes, all_users);
    return out;
}

double nearest_prototype_accuracy(const std::vector<Vec>& prototypes, const std::vector<Item>& users) {
    if (users.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& u : users) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t best_k = 0;
        for (std::size_t k = 0; k < prototypes.size(); ++k) {
            for (std::size_t l = 0; l < u.raw.rows(); ++l) {
                double d = 0.0;
                for (std::size_t c = 0; c < u.raw.cols(); ++c) {
                    const double diff = u.raw(l, c) - prototypes[k][c];
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    best_k = k;
                }
            }
        }
        if (best_k + 1 == u.product) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(users.size());
}

SyntheticSummary generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir) {
    const SyntheticData data = synthesize(spec);
    const fs::path root(out_dir);
    fs::create_directories(root / "features");

    auto emit = [&](const Dataset& d, const std::string& name) {
        Manifest m;
        m.vocab = data.vocab;
        auto add = [&](const Item& item, Domain domain) {
            char file[32];
            std::snprintf(file, sizeof file, "%06llu.xfmp", static_cast<unsigned long long>(item.id));
            const std::string rel = std::string("features/") + file;
            write_feature_map((root / rel).string(), item.raw);
            m.records.push_back({item.id, domain, item.product, rel,
                                 domain == Domain::Shop ? item.tags.active() : std::vector<std::size_t>{}, 0});
        };
        for (const auto& u : d.users) add(u, Domain::User);
        for (const auto& s : d.shops) add(s, Domain::Shop);
        std::sort(m.records.begin(), m.records.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        write_manifest((root / name).string(), m);
        return m.records.size();
    };

    write_vocabulary((root / "tags.tsv").string(), data.vocab);
    SyntheticSummary summary;
    summary.train_records = emit(data.train, "train.tsv");
    summary.test_records = emit(data.test, "test.tsv");
    write_ground_truth((root / "ground_truth.tsv").string(), data.ground_truth);
    summary.oracle_accuracy = data.oracle_accuracy;

    std::ofstream info(root / "synthetic.txt", std::ios::trunc);
    char acc[32];
    std::snprintf(acc, sizeof acc, "%.6g", data.oracle_accuracy);
    info << "n_products=" << spec.n_products << "\nn_heldout_products=" << spec.n_heldout_products
         << "\nuser_per_product=" << spec.user_per_product << "\nshop_per_product=" << spec.shop_per_product
         << "\nlocations=" << spec.locations << "\nchannels=" << spec.channels << "\ntags=" << spec.tags
         << "\nraw_dim=" << spec.raw_dim << "\nsignal_locations=" << spec.signal_locations
         << "\nnoise_sigma=" << spec.noise_sigma << "\ndistractors=" << (spec.distractors ? 1 : 0)
         << "\nseed=" << spec.seed << "\noracle_accuracy=" << acc << '\n';
    return summary;
}

}  // namespace xret
