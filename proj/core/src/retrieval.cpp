#include "xret/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include "binio.hpp"
#include "xret/errors.hpp"

namespace xret {

bool hit_before(const Hit& a, const Hit& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.item_id < b.item_id;
}

const IndexEntry* ShopIndex::find(std::uint64_t id) const {
    auto it = std::lower_bound(entries.begin(), entries.end(), id,
                               [](const IndexEntry& e, std::uint64_t v) { return e.id < v; });
    return it != entries.end() && it->id == id ? &*it : nullptr;
}

ShopIndex build_index(const std::vector<Item>& shops, const Model& model) {
    ShopIndex index;
    index.model_fingerprint = fingerprint(model);
    index.channels = model.config.channels;
    index.tags = model.config.tags;
    index.entries.reserve(shops.size());
    for (const auto& s : shops) {
        index.entries.push_back({s.id, s.product, embed_database(s.raw, s.tags, model), s.tags});
    }
    std::sort(index.entries.begin(), index.entries.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (std::size_t i = 1; i < index.entries.size(); ++i) {
        if (index.entries[i].id == index.entries[i - 1].id) {
            throw InvalidArgument("build_index: duplicate item id " + std::to_string(index.entries[i].id));
        }
    }
    return index;
}

std::vector<std::uint8_t> serialize_index(const ShopIndex& index) {
    binio::Writer w;
    w.magic("XIDX");
    w.u32(kIndexVersion);
    w.bytes(index.model_fingerprint);
    w.u32(static_cast<std::uint32_t>(index.channels));
    w.u32(static_cast<std::uint32_t>(index.tags));
    w.u64(index.entries.size());
    const std::size_t tag_bytes = (index.tags + 7) / 8;
    for (const auto& e : index.entries) {
        if (e.embedding.size() != index.channels || e.tags.size() != index.tags) {
            throw DimensionMismatch("serialize_index: entry " + std::to_string(e.id) + " has wrong dimensions");
        }
        w.u64(e.id);
        w.u64(e.product);
        std::vector<std::uint8_t> bits(tag_bytes, 0);
        for (std::size_t t = 0; t < index.tags; ++t) {
            if (e.tags.test(t)) bits[t / 8] |= static_cast<std::uint8_t>(1u << (t % 8));
        }
        w.bytes(bits);
        for (double x : e.embedding) w.f64(x);
    }
    return std::move(w.buffer());
}

ShopIndex parse_index(std::span<const std::uint8_t> bytes) {
    binio::Reader r(bytes);
    r.expect_magic("XIDX");
    const std::size_t version_at = r.offset();
    if (const auto v = r.u32(); v != kIndexVersion) {
        throw ParseError("unsupported index version " + std::to_string(v), version_at);
    }
    ShopIndex index;
    const auto fp = r.bytes(index.model_fingerprint.size());
    std::copy(fp.begin(), fp.end(), index.model_fingerprint.begin());
    const std::size_t dims_at = r.offset();
    index.channels = r.u32();
    index.tags = r.u32();
    if (index.channels == 0 || index.channels > (1u << 20) || index.tags > (1u << 20)) {
        throw ParseError("implausible index dimensions", dims_at);
    }
    const std::uint64_t count = r.u64();
    const std::size_t tag_bytes = (index.tags + 7) / 8;
    const std::size_t entry_bytes = 16 + tag_bytes + 8 * index.channels;
    if (count > r.remaining() / entry_bytes) {
        throw ParseError("index claims " + std::to_string(count) + " entries but only " +
                             std::to_string(r.remaining()) + " bytes remain",
                         r.offset());
    }
    index.entries.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::size_t at = r.offset();
        IndexEntry e;
        e.id = r.u64();
        e.product = r.u64();
        const auto bits = r.bytes(tag_bytes);
        e.tags = TagVector(index.tags);
        for (std::size_t t = 0; t < index.tags; ++t) {
            if (bits[t / 8] & (1u << (t % 8))) e.tags.set(t);
        }
        e.embedding.resize(index.channels);
        for (double& x : e.embedding) x = r.f64();
        if (!index.entries.empty() && index.entries.back().id >= e.id) {
            throw ParseError("index entries not in ascending id order", at);
        }
        index.entries.push_back(std::move(e));
    }
    if (!r.at_end()) throw ParseError("trailing bytes after last entry", r.offset());
    return index;
}

void save_index(const std::string& path, const ShopIndex& index) { binio::write_file(path, serialize_index(index)); }

ShopIndex load_index(const std::string& path) { return parse_index(binio::read_file(path)); }

Searcher::Searcher(const ShopIndex& index, const Model& model, std::size_t threads)
    : index_(index), model_(model), threads_(std::max<std::size_t>(threads, 1)) {
    if (fingerprint(model) != index.model_fingerprint) {
        throw FingerprintMismatch("index was built with model " + to_hex(index.model_fingerprint) +
                                  ", query model is " + to_hex(fingerprint(model)));
    }
}

RankedList Searcher::initial_search(const Matrix& query_raw, std::size_t k) const {
    const Vec q = embed_user_simple(query_raw, model_);
    RankedList all;
    all.reserve(index_.size());
    for (const auto& e : index_.entries) all.push_back({e.id, distance(q, e.embedding)});
    const std::size_t n = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n), all.end(), hit_before);
    all.resize(n);
    return all;
}

RankedList Searcher::rerank(const Matrix& query_raw, const RankedList& candidates) const {
    if (model_.config.variant != Variant::CtxYNet) {
        throw UnsupportedVariant("rerank requires CtxYNet, model is " + std::string(variant_name(model_.config.variant)));
    }
    std::vector<const IndexEntry*> entries;
    entries.reserve(candidates.size());
    for (const auto& c : candidates) {
        const IndexEntry* e = index_.find(c.item_id);
        if (!e) throw InvalidArgument("rerank: candidate " + std::to_string(c.item_id) + " is not in the index");
        entries.push_back(e);
    }

    const FeatureMap features = extract_features(query_raw, Domain::User, model_);
    RankedList out(candidates.size());
    auto score = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const Vec o = embed_user_context_features(features, entries[i]->embedding, model_);
            out[i] = {entries[i]->id, distance(o, entries[i]->embedding)};
        }
    };
    const std::size_t n_threads = std::min(threads_, std::max<std::size_t>(candidates.size(), 1));
    if (n_threads <= 1) {
        score(0, candidates.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (candidates.size() + n_threads - 1) / n_threads;
        for (std::size_t b = 0; b < candidates.size(); b += chunk) {
            pool.emplace_back(score, b, std::min(b + chunk, candidates.size()));
        }
        for (auto& t : pool) t.join();
    }
    std::sort(out.begin(), out.end(), hit_before);
    return out;
}

RankedList Searcher::search(const Matrix& query_raw, std::size_t depth, bool use_rerank) const {
    RankedList initial = initial_search(query_raw, depth);
    if (!use_rerank || model_.config.variant != Variant::CtxYNet) return initial;
    return rerank(query_raw, initial);
}

RankedList initial_search(const ShopIndex& index, const Matrix& query_raw, const Model& model, std::size_t k) {
    return Searcher(index, model).initial_search(query_raw, k);
}

RankedList rerank(const ShopIndex& index, const Matrix& query_raw, const RankedList& candidates, const Model& model) {
    return Searcher(index, model).rerank(query_raw, candidates);
}

PrecisionAtK precision_at_k(const QueryResults& results, const GroundTruth& truth, const ShopIndex& index,
                            std::size_t k) {
    PrecisionAtK p;
    std::size_t hits = 0;
    for (const auto& [query, ranking] : results) {
        auto gt = truth.find(query);
        if (gt == truth.end()) {
            ++p.excluded;
            continue;
        }
        ++p.queries;
        const std::size_t n = std::min(k, ranking.size());
        for (std::size_t i = 0; i < n; ++i) {
            const IndexEntry* e = index.find(ranking[i].item_id);
            if (!e) throw InvalidArgument("result item " + std::to_string(ranking[i].item_id) + " is not in the index");
            if (e->product == gt->second) {
                ++hits;
                break;
            }
        }
    }
    p.value = p.queries ? static_cast<double>(hits) / static_cast<double>(p.queries) : 0.0;
    return p;
}

void write_results(std::ostream& out, const QueryResults& results) {
    char buf[96];
    for (const auto& [query, ranking] : results) {
        out << "#query\t" << query << '\n';
        for (std::size_t i = 0; i < ranking.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%zu\t%llu\t%.6g\n", i + 1,
                          static_cast<unsigned long long>(ranking[i].item_id), ranking[i].distance);
            out << buf;
        }
    }
}

QueryResults read_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open results " + path);
    QueryResults results;
    RankedList* current = nullptr;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream fields(line);
        if (line.rfind("#query\t", 0) == 0) {
            std::string tag;
            std::uint64_t id = 0;
            if (!(fields >> tag >> id)) throw ManifestError(path, lineno, 2, "bad query id");
            current = &results[id];
            continue;
        }
        if (!current) throw ManifestError(path, lineno, 0, "result row before any #query line");
        std::size_t rank = 0;
        Hit h;
        if (!(fields >> rank >> h.item_id >> h.distance)) {
            throw ManifestError(path, lineno, 0, "expected rank<TAB>item_id<TAB>distance");
        }
        if (rank != current->size() + 1) throw ManifestError(path, lineno, 1, "ranks must be consecutive from 1");
        current->push_back(h);
    }
    return results;
}

}  // namespace xret
