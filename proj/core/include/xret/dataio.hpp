#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xret/attention.hpp"
#include "xret/model.hpp"

namespace xret {

struct TagVocabulary {
    std::vector<std::string> names;  // index = tag id
    std::size_t size() const noexcept { return names.size(); }
};

struct ManifestRecord {
    std::uint64_t id = 0;
    Domain domain = Domain::User;
    std::uint64_t product = 0;
    std::string path;  // as written in the manifest
    std::vector<std::size_t> tags;
    std::size_t line = 0;
};

struct Manifest {
    std::vector<ManifestRecord> records;
    TagVocabulary vocab;
    std::string base_dir;  // feature paths are resolved against this

    std::string resolve(const ManifestRecord& r) const;
};

// `tags.tsv`: one `tag_id<TAB>name` per line, ids 0..T-1 in order.
TagVocabulary load_vocabulary(const std::string& path);
void write_vocabulary(const std::string& path, const TagVocabulary& vocab);

// Manifest TSV: `id<TAB>domain<TAB>product<TAB>path<TAB>tag,tag,...`; blank
// lines and lines starting with '#' are skipped. When `vocab_path` is empty
// the vocabulary is read from tags.tsv next to the manifest.
Manifest load_manifest(const std::string& path, const std::string& vocab_path = {}, bool check_files = true);
void write_manifest(const std::string& path, const Manifest& manifest);

inline constexpr std::uint32_t kFeatureMapVersion = 1;

// XFMP: magic, version, L, raw_dim (u32 LE), then float32 LE row-major.
void write_feature_map(const std::string& path, const Matrix& raw);
Matrix load_feature_map(const std::string& path);
// Also checks the header against the model's L and raw_dim.
Matrix load_feature_map(const std::string& path, const ModelConfig& config);

using GroundTruth = std::map<std::uint64_t, std::uint64_t>;  // user id -> product id

void write_ground_truth(const std::string& path, const GroundTruth& gt);
GroundTruth load_ground_truth(const std::string& path);

struct Item {
    std::uint64_t id = 0;
    std::uint64_t product = 0;
    Matrix raw;
    TagVector tags;
};

// Fully loaded feature maps, split by domain, in manifest order.
struct Dataset {
    std::vector<Item> users;
    std::vector<Item> shops;
    std::size_t tag_count = 0;
};

Dataset load_dataset(const Manifest& manifest, const ModelConfig& config);

struct SyntheticSpec {
    std::size_t n_products = 50;          // training products
    std::size_t n_heldout_products = 20;  // evaluation products, disjoint from training
    std::size_t user_per_product = 4;
    std::size_t shop_per_product = 2;
    std::size_t locations = 9;
    std::size_t channels = 16;
    std::size_t tags = 10;
    std::size_t raw_dim = 16;
    std::size_t signal_locations = 3;
    double noise_sigma = 0.3;
    bool distractors = true;
    std::uint64_t seed = 7;

    void validate() const;
    ModelConfig model_config(Variant variant = Variant::CtxYNet) const;
};

// In-memory synthetic corpus. Training products come first; product ids
// and item ids start at 1.
struct SyntheticData {
    SyntheticSpec spec;
    TagVocabulary vocab;
    std::vector<Vec> prototypes;  // index = product id - 1
    Dataset train;
    Dataset test;
    GroundTruth ground_truth;   // every user image
    double oracle_accuracy = 0;  // nearest clean prototype over locations
};

SyntheticData synthesize(const SyntheticSpec& spec);

// Nearest-prototype identification rate: each user image is assigned the
// product whose prototype is closest to any of its locations.
double nearest_prototype_accuracy(const std::vector<Vec>& prototypes, const std::vector<Item>& users);

struct SyntheticSummary {
    std::size_t train_records = 0;
    std::size_t test_records = 0;
    double oracle_accuracy = 0;
};

// Writes tags.tsv, train.tsv, test.tsv, ground_truth.tsv, synthetic.txt and
// features/*.xfmp under `out_dir` (created if missing).
SyntheticSummary generate_synthetic(const SyntheticSpec& spec, const std::string& out_dir);

}  // namespace xret
