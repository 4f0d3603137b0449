#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "momok/rng.hpp"

namespace momok {

struct Triple {
    std::int32_t h = 0;
    std::int32_t r = 0;
    std::int32_t t = 0;
    friend bool operator==(const Triple&, const Triple&) = default;
};

enum class Split { train, valid, test };
Split split_from_name(const std::string& name);
const char* split_name(Split s);

// Integer-encoded triples with vocabularies built over the union of all
// splits. Ids are assigned in lexicographic name order, so two loads of the
// same files always agree.
struct TripleStore {
    std::vector<std::string> entity_names;
    std::vector<std::string> relation_names;
    std::unordered_map<std::string, std::int32_t> entity_ids;
    std::unordered_map<std::string, std::int32_t> relation_ids;
    std::vector<Triple> train;
    std::vector<Triple> valid;
    std::vector<Triple> test;

    std::size_t n_entities() const { return entity_names.size(); }
    std::size_t n_relations() const { return relation_names.size(); }
    const std::vector<Triple>& split(Split s) const;
};

TripleStore load_triples(const std::string& train_path, const std::string& valid_path,
                         const std::string& test_path);

// Per-modality raw entity feature matrix aligned to entity ids. Rows absent
// from the source file are imputed and flagged present=false.
struct FeatureTable {
    std::string modality;
    std::size_t dim = 0;
    std::vector<float> rows;            // n × dim
    std::vector<std::uint8_t> present;  // n

    std::size_t n_rows() const { return present.size(); }
    std::span<const float> row(std::size_t i) const {
        return {rows.data() + i * dim, dim};
    }
    std::span<float> row(std::size_t i) { return {rows.data() + i * dim, dim}; }
    friend bool operator==(const FeatureTable&, const FeatureTable&) = default;
};

// Per-dimension mean/std over the rows flagged present.
struct FeatureStats {
    std::vector<double> mean;
    std::vector<double> std_dev;
    std::size_t observed = 0;
};
FeatureStats observed_stats(const FeatureTable& table);

// Imputation policy for absent rows: seeded Gaussian matched to the observed
// per-dimension statistics, falling back to mean 0 / std 0.02 when nothing
// was observed.
void impute_row(FeatureTable& table, std::size_t row, const FeatureStats& stats,
                std::uint64_t seed);

struct FeatureLoadOptions {
    bool standardize = true;
    // 0 -> derived from the modality tag, keeping imputation deterministic.
    std::uint64_t impute_seed = 0;
};

FeatureTable load_features(const std::string& path, const std::string& modality,
                           const TripleStore& store,
                           const FeatureLoadOptions& opts = {});

// File-order feature representation used for corrupt-and-rewrite: untouched
// text rows keep their original bytes, so a ratio-0 rewrite is byte-identical.
enum class FeatureFormat { text, binary };

struct RawFeatureFile {
    FeatureFormat format = FeatureFormat::text;
    std::size_t dim = 0;
    std::vector<std::string> names;   // data-row order as in the file
    std::vector<float> values;        // names.size() × dim
    std::vector<std::uint8_t> removed;
    std::vector<std::uint8_t> touched;
    // Text only: every original line verbatim plus the line index of each row.
    std::vector<std::string> lines;
    std::vector<std::size_t> row_line;
    bool final_newline = true;
};

RawFeatureFile read_feature_file(const std::string& path);
void write_feature_file(const std::string& path, const RawFeatureFile& file);
std::string format_feature_line(const std::string& name, std::span<const float> values);

// For each (h, r): the set of true tails over train ∪ valid ∪ test, and the
// mirror map for (r, t).
class FilterIndex {
public:
    const std::vector<std::int32_t>& tails(std::int32_t h, std::int32_t r) const;
    const std::vector<std::int32_t>& heads(std::int32_t r, std::int32_t t) const;

    void insert(const Triple& triple);
    void finalize();  // sort + dedup

private:
    static std::uint64_t key(std::int32_t a, std::int32_t b) {
        return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) |
               static_cast<std::uint32_t>(b);
    }
    std::unordered_map<std::uint64_t, std::vector<std::int32_t>> tails_;
    std::unordered_map<std::uint64_t, std::vector<std::int32_t>> heads_;
};

FilterIndex build_filter_index(const TripleStore& store);

struct TripleBatch {
    std::vector<Triple> triples;
    std::vector<std::int32_t> entities;  // distinct heads and tails, ascending
};

std::vector<TripleBatch> make_batches(const TripleStore& store, std::size_t batch_size,
                                      std::uint64_t epoch_seed);

// Deterministic choice of floor(ratio * n) distinct indices, returned sorted.
std::vector<std::size_t> corruption_subset(std::size_t n, double ratio,
                                           std::uint64_t seed);

FeatureTable corrupt_features_noise(const FeatureTable& table, double ratio,
                                    double scale, std::uint64_t seed);
FeatureTable corrupt_features_missing(const FeatureTable& table, double ratio,
                                      std::uint64_t seed);
// Train split reduced to ceil((1-ratio)*|train|) triples in original order;
// valid/test and vocabularies untouched. ratio must be in [0, 1).
TripleStore sparsify_triples(const TripleStore& store, double ratio,
                             std::uint64_t seed);

// Per-entity noise stream shared by the in-memory op and the file rewriter.
Rng noise_stream(std::uint64_t seed, std::size_t entity);
Rng impute_stream(std::uint64_t seed, std::size_t entity);

}  // namespace momok
