#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "xret/dataio.hpp"
#include "xret/model.hpp"

namespace xret {

inline constexpr std::size_t kDefaultRerankDepth = 256;
inline constexpr std::uint32_t kIndexVersion = 1;

struct IndexEntry {
    std::uint64_t id = 0;
    std::uint64_t product = 0;
    Vec embedding;  // unit norm
    TagVector tags;

    bool operator==(const IndexEntry&) const = default;
};

struct ShopIndex {
    Fingerprint model_fingerprint{};
    std::size_t channels = 0;
    std::size_t tags = 0;
    std::vector<IndexEntry> entries;  // ascending id

    const IndexEntry* find(std::uint64_t id) const;
    std::size_t size() const noexcept { return entries.size(); }
    bool operator==(const ShopIndex&) const = default;
};

struct Hit {
    std::uint64_t item_id = 0;
    double distance = 0;
    bool operator==(const Hit&) const = default;
};

// Ascending distance, ties by ascending item id.
using RankedList = std::vector<Hit>;

bool hit_before(const Hit& a, const Hit& b);

// One database embedding per shop item. Throws InvalidArgument on duplicate ids.
ShopIndex build_index(const std::vector<Item>& shops, const Model& model);

std::vector<std::uint8_t> serialize_index(const ShopIndex& index);
ShopIndex parse_index(std::span<const std::uint8_t> bytes);
void save_index(const std::string& path, const ShopIndex& index);
ShopIndex load_index(const std::string& path);

// Query execution against one index with one model. The model fingerprint
// is checked once at construction.
class Searcher {
public:
    Searcher(const ShopIndex& index, const Model& model, std::size_t threads = 1);

    // Exhaustive scan with the uniform-pooled query embedding; top min(K, |index|).
    RankedList initial_search(const Matrix& query_raw, std::size_t k) const;

    // Rescores candidates with the context-attended query embedding. The
    // output is a permutation of the input. Requires CtxYNet.
    RankedList rerank(const Matrix& query_raw, const RankedList& candidates) const;

    // initial_search with `depth` candidates, then rerank when enabled and
    // the model supports it.
    RankedList search(const Matrix& query_raw, std::size_t depth, bool use_rerank) const;

private:
    const ShopIndex& index_;
    const Model& model_;
    std::size_t threads_;
};

RankedList initial_search(const ShopIndex& index, const Matrix& query_raw, const Model& model, std::size_t k);
RankedList rerank(const ShopIndex& index, const Matrix& query_raw, const RankedList& candidates, const Model& model);

using QueryResults = std::map<std::uint64_t, RankedList>;  // query id -> ranking

struct PrecisionAtK {
    double value = 0;
    std::size_t queries = 0;   // evaluated
    std::size_t excluded = 0;  // no ground truth
};

// Fraction of queries with a same-product item among the first K results.
PrecisionAtK precision_at_k(const QueryResults& results, const GroundTruth& truth, const ShopIndex& index,
                            std::size_t k);

// `rank<TAB>item_id<TAB>distance` lines (rank from 1), each query preceded
// by a `#query<TAB>id` line.
void write_results(std::ostream& out, const QueryResults& results);
QueryResults read_results(const std::string& path);

}  // namespace xret
