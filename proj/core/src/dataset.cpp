#include "momok/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "momok/errors.hpp"

namespace momok {

namespace {

constexpr char kFeatureMagic[4] = {'M', 'M', 'K', 'F'};

std::string strip_cr(std::string line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
}

std::vector<std::string> split_fields(const std::string& line, char sep) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        if (pos == std::string::npos) {
            fields.push_back(line.substr(start));
            break;
        }
        fields.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return fields;
}

bool parse_float(const std::string& text, float& out) {
    if (text.empty()) return false;
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end != text.c_str() + text.size()) return false;
    out = static_cast<float>(v);
    return !std::isnan(out) && !std::isinf(out);
}

void write_u32_le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& in, const std::string& path, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError(path + ": truncated while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

std::vector<Triple> parse_triple_file(const std::string& path,
                                      const std::unordered_map<std::string, std::int32_t>& ents,
                                      const std::unordered_map<std::string, std::int32_t>& rels) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open triple file '" + path + "'");
    std::vector<Triple> out;
    std::set<std::tuple<std::int32_t, std::int32_t, std::int32_t>> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line, '\t');
        if (fields.size() != 3)
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": expected 3 tab-separated fields, got " +
                            std::to_string(fields.size()));
        Triple tr{ents.at(fields[0]), rels.at(fields[1]), ents.at(fields[2])};
        if (!seen.insert({tr.h, tr.r, tr.t}).second)
            throw DataError(path + ":" + std::to_string(line_no) + ": duplicate triple '" +
                            line + "' within split");
        out.push_back(tr);
    }
    return out;
}

// First pass over a triple file collecting names; format errors are raised
// here so they carry line numbers even before vocabularies exist.
void collect_names(const std::string& path, std::set<std::string>& ents,
                   std::set<std::string>& rels) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open triple file '" + path + "'");
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = strip_cr(line);
        if (line.empty()) continue;
        const auto fields = split_fields(line, '\t');
        if (fields.size() != 3)
            throw DataError(path + ":" + std::to_string(line_no) +
                            ": expected 3 tab-separated fields, got " +
                            std::to_string(fields.size()));
        ents.insert(fields[0]);
        rels.insert(fields[1]);
        ents.insert(fields[2]);
    }
}

}  // namespace

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "valid") return Split::valid;
    if (name == "test") return Split::test;
    throw ConfigError("unknown split '" + name + "' (expected train|valid|test)");
}

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::valid: return "valid";
        case Split::test: return "test";
    }
    return "?";
}

const std::vector<Triple>& TripleStore::split(Split s) const {
    switch (s) {
        case Split::train: return train;
        case Split::valid: return valid;
        case Split::test: return test;
    }
    return train;
}

TripleStore load_triples(const std::string& train_path, const std::string& valid_path,
                         const std::string& test_path) {
    std::set<std::string> ent_names, rel_names;
    collect_names(train_path, ent_names, rel_names);
    collect_names(valid_path, ent_names, rel_names);
    collect_names(test_path, ent_names, rel_names);

    TripleStore store;
    store.entity_names.assign(ent_names.begin(), ent_names.end());
    store.relation_names.assign(rel_names.begin(), rel_names.end());
    for (std::size_t i = 0; i < store.entity_names.size(); ++i)
        store.entity_ids[store.entity_names[i]] = static_cast<std::int32_t>(i);
    for (std::size_t i = 0; i < store.relation_names.size(); ++i)
        store.relation_ids[store.relation_names[i]] = static_cast<std::int32_t>(i);

    store.train = parse_triple_file(train_path, store.entity_ids, store.relation_ids);
    store.valid = parse_triple_file(valid_path, store.entity_ids, store.relation_ids);
    store.test = parse_triple_file(test_path, store.entity_ids, store.relation_ids);
    if (store.train.empty())
        throw DataError("train split '" + train_path + "' is empty");
    return store;
}

FeatureStats observed_stats(const FeatureTable& table) {
    FeatureStats stats;
    stats.mean.assign(table.dim, 0.0);
    stats.std_dev.assign(table.dim, 0.0);
    for (std::size_t i = 0; i < table.n_rows(); ++i) {
        if (!table.present[i]) continue;
        ++stats.observed;
        const auto row = table.row(i);
        for (std::size_t d = 0; d < table.dim; ++d) stats.mean[d] += row[d];
    }
    if (stats.observed == 0) {
        std::fill(stats.std_dev.begin(), stats.std_dev.end(), 0.02);
        return stats;
    }
    for (auto& m : stats.mean) m /= static_cast<double>(stats.observed);
    for (std::size_t i = 0; i < table.n_rows(); ++i) {
        if (!table.present[i]) continue;
        const auto row = table.row(i);
        for (std::size_t d = 0; d < table.dim; ++d) {
            const double delta = row[d] - stats.mean[d];
            stats.std_dev[d] += delta * delta;
        }
    }
    for (auto& s : stats.std_dev) s = std::sqrt(s / static_cast<double>(stats.observed));
    return stats;
}

Rng noise_stream(std::uint64_t seed, std::size_t entity) {
    return Rng(hash_combine(hash_combine(seed, hash_str("noise")), entity));
}

Rng impute_stream(std::uint64_t seed, std::size_t entity) {
    return Rng(hash_combine(hash_combine(seed, hash_str("impute")), entity));
}

void impute_row(FeatureTable& table, std::size_t row_idx, const FeatureStats& stats,
                std::uint64_t seed) {
    Rng rng = impute_stream(seed, row_idx);
    auto row = table.row(row_idx);
    for (std::size_t d = 0; d < table.dim; ++d)
        row[d] = static_cast<float>(stats.mean[d] + stats.std_dev[d] * rng.normal());
    table.present[row_idx] = 0;
}

RawFeatureFile read_feature_file(const std::string& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw DataError("cannot open feature file '" + path + "'");
    char magic[4] = {0, 0, 0, 0};
    probe.read(magic, 4);
    const bool binary = probe.gcount() == 4 && std::memcmp(magic, kFeatureMagic, 4) == 0;
    probe.close();

    RawFeatureFile file;
    if (binary) {
        file.format = FeatureFormat::binary;
        std::ifstream in(path, std::ios::binary);
        in.seekg(4);
        const std::uint32_t count = read_u32_le(in, path, "count");
        const std::uint32_t dim = read_u32_le(in, path, "dim");
        if (dim == 0) throw DataError(path + ": feature dim must be positive");
        file.dim = dim;
        file.names.reserve(count);
        for (std::uint32_t i = 0; i < count; ++i) {
            const std::uint32_t len = read_u32_le(in, path, "name length");
            std::string name(len, '\0');
            if (!in.read(name.data(), len))
                throw DataError(path + ": truncated entity name block");
            file.names.push_back(std::move(name));
        }
        file.values.resize(static_cast<std::size_t>(count) * dim);
        for (auto& v : file.values) {
            std::uint32_t bits = read_u32_le(in, path, "feature data");
            std::memcpy(&v, &bits, 4);
        }
        char extra;
        if (in.read(&extra, 1))
            throw DataError(path + ": trailing bytes after feature data");
    } else {
        file.format = FeatureFormat::text;
        std::ifstream in(path, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
        file.final_newline = !content.empty() && content.back() == '\n';
        std::istringstream lines(content);
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(lines, line)) {
            ++line_no;
            file.lines.push_back(line);
            const std::string data = strip_cr(line);
            if (data.empty()) continue;
            const auto fields = split_fields(data, '\t');
            if (fields.size() != 2)
                throw DataError(path + ":" + std::to_string(line_no) +
                                ": expected 'entity<TAB>v1,v2,...' with one tab");
            const auto parts = split_fields(fields[1], ',');
            if (file.dim == 0) {
                file.dim = parts.size();
            } else if (parts.size() != file.dim) {
                throw DataError(path + ":" + std::to_string(line_no) +
                                ": row has " + std::to_string(parts.size()) +
                                " values, expected " + std::to_string(file.dim));
            }
            for (const auto& p : parts) {
                float v;
                if (!parse_float(p, v))
                    throw DataError(path + ":" + std::to_string(line_no) +
                                    ": bad numeric value '" + p + "'");
                file.values.push_back(v);
            }
            file.names.push_back(fields[0]);
            file.row_line.push_back(file.lines.size() - 1);
        }
    }
    file.removed.assign(file.names.size(), 0);
    file.touched.assign(file.names.size(), 0);
    return file;
}

std::string format_feature_line(const std::string& name, std::span<const float> values) {
    std::string out = name;
    out.push_back('\t');
    char buf[64];
    for (std::size_t d = 0; d < values.size(); ++d) {
        if (d) out.push_back(',');
        std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(values[d]));
        out += buf;
    }
    return out;
}

void write_feature_file(const std::string& path, const RawFeatureFile& file) {
    if (file.format == FeatureFormat::binary) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot open '" + path + "' for writing");
        std::uint32_t count = 0;
        for (auto rm : file.removed)
            if (!rm) ++count;
        out.write(kFeatureMagic, 4);
        write_u32_le(out, count);
        write_u32_le(out, static_cast<std::uint32_t>(file.dim));
        for (std::size_t i = 0; i < file.names.size(); ++i) {
            if (file.removed[i]) continue;
            write_u32_le(out, static_cast<std::uint32_t>(file.names[i].size()));
            out.write(file.names[i].data(),
                      static_cast<std::streamsize>(file.names[i].size()));
        }
        for (std::size_t i = 0; i < file.names.size(); ++i) {
            if (file.removed[i]) continue;
            for (std::size_t d = 0; d < file.dim; ++d) {
                std::uint32_t bits;
                std::memcpy(&bits, &file.values[i * file.dim + d], 4);
                write_u32_le(out, bits);
            }
        }
        if (!out) throw DataError("write failed for '" + path + "'");
        return;
    }

    // Text: untouched rows keep their original bytes.
    std::vector<std::string> lines = file.lines;
    std::vector<std::uint8_t> drop(lines.size(), 0);
    for (std::size_t i = 0; i < file.names.size(); ++i) {
        const std::size_t li = file.row_line[i];
        if (file.removed[i])
            drop[li] = 1;
        else if (file.touched[i])
            lines[li] = format_feature_line(
                file.names[i], {file.values.data() + i * file.dim, file.dim});
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    bool first = true;
    for (std::size_t li = 0; li < lines.size(); ++li) {
        if (drop[li]) continue;
        if (!first) out.put('\n');
        out.write(lines[li].data(), static_cast<std::streamsize>(lines[li].size()));
        first = false;
    }
    if (file.final_newline && !first) out.put('\n');
    if (!out) throw DataError("write failed for '" + path + "'");
}

FeatureTable load_features(const std::string& path, const std::string& modality,
                           const TripleStore& store, const FeatureLoadOptions& opts) {
    const RawFeatureFile file = read_feature_file(path);

    FeatureTable table;
    table.modality = modality;
    table.dim = file.dim;
    table.rows.assign(store.n_entities() * file.dim, 0.0f);
    table.present.assign(store.n_entities(), 0);

    std::vector<std::string> unknown;
    std::vector<std::string> duplicate;
    for (std::size_t i = 0; i < file.names.size(); ++i) {
        const auto it = store.entity_ids.find(file.names[i]);
        if (it == store.entity_ids.end()) {
            unknown.push_back(file.names[i]);
            continue;
        }
        const auto id = static_cast<std::size_t>(it->second);
        if (table.present[id]) {
            duplicate.push_back(file.names[i]);
            continue;
        }
        std::copy_n(file.values.data() + i * file.dim, file.dim,
                    table.rows.data() + id * file.dim);
        table.present[id] = 1;
    }
    if (!unknown.empty()) {
        std::string msg = path + ": features for unknown entities:";
        for (const auto& n : unknown) msg += " '" + n + "'";
        throw DataError(msg);
    }
    if (!duplicate.empty()) {
        std::string msg = path + ": duplicate feature rows:";
        for (const auto& n : duplicate) msg += " '" + n + "'";
        throw DataError(msg);
    }

    const std::uint64_t impute_seed =
        opts.impute_seed ? opts.impute_seed : hash_str(modality);
    const FeatureStats stats = observed_stats(table);
    for (std::size_t i = 0; i < table.n_rows(); ++i)
        if (!table.present[i]) impute_row(table, i, stats, impute_seed);

    if (opts.standardize) {
        // Standardize against the observed-row statistics; degenerate
        // dimensions collapse to zero.
        for (std::size_t i = 0; i < table.n_rows(); ++i) {
            auto row = table.row(i);
            for (std::size_t d = 0; d < table.dim; ++d) {
                const double s = stats.std_dev[d];
                row[d] = s > 1e-12
                             ? static_cast<float>((row[d] - stats.mean[d]) / s)
                             : 0.0f;
            }
        }
    }
    return table;
}

const std::vector<std::int32_t>& FilterIndex::tails(std::int32_t h, std::int32_t r) const {
    static const std::vector<std::int32_t> empty;
    const auto it = tails_.find(key(h, r));
    return it == tails_.end() ? empty : it->second;
}

const std::vector<std::int32_t>& FilterIndex::heads(std::int32_t r, std::int32_t t) const {
    static const std::vector<std::int32_t> empty;
    const auto it = heads_.find(key(t, r));
    return it == heads_.end() ? empty : it->second;
}

void FilterIndex::insert(const Triple& triple) {
    tails_[key(triple.h, triple.r)].push_back(triple.t);
    heads_[key(triple.t, triple.r)].push_back(triple.h);
}

void FilterIndex::finalize() {
    for (auto* map : {&tails_, &heads_}) {
        for (auto& [k, v] : *map) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
        }
    }
}

FilterIndex build_filter_index(const TripleStore& store) {
    FilterIndex index;
    for (const auto* split : {&store.train, &store.valid, &store.test})
        for (const auto& tr : *split) index.insert(tr);
    index.finalize();
    return index;
}

std::vector<TripleBatch> make_batches(const TripleStore& store, std::size_t batch_size,
                                      std::uint64_t epoch_seed) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<std::size_t> order(store.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(epoch_seed);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);

    std::vector<TripleBatch> batches;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        TripleBatch batch;
        const std::size_t end = std::min(order.size(), start + batch_size);
        for (std::size_t i = start; i < end; ++i) {
            const Triple& tr = store.train[order[i]];
            batch.triples.push_back(tr);
            batch.entities.push_back(tr.h);
            batch.entities.push_back(tr.t);
        }
        std::sort(batch.entities.begin(), batch.entities.end());
        batch.entities.erase(std::unique(batch.entities.begin(), batch.entities.end()),
                             batch.entities.end());
        batches.push_back(std::move(batch));
    }
    return batches;
}

std::vector<std::size_t> corruption_subset(std::size_t n, double ratio,
                                           std::uint64_t seed) {
    if (ratio < 0.0 || ratio > 1.0)
        throw std::invalid_argument("corruption ratio must be in [0, 1]");
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(hash_combine(seed, hash_str("subset")));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

FeatureTable corrupt_features_noise(const FeatureTable& table, double ratio,
                                    double scale, std::uint64_t seed) {
    if (scale < 0.0) throw std::invalid_argument("noise scale must be >= 0");
    FeatureTable out = table;
    for (std::size_t e : corruption_subset(table.n_rows(), ratio, seed)) {
        Rng rng = noise_stream(seed, e);
        auto row = out.row(e);
        for (std::size_t d = 0; d < out.dim; ++d)
            row[d] = static_cast<float>(row[d] + scale * rng.normal());
    }
    return out;
}

FeatureTable corrupt_features_missing(const FeatureTable& table, double ratio,
                                      std::uint64_t seed) {
    FeatureTable out = table;
    const FeatureStats stats = observed_stats(table);
    for (std::size_t e : corruption_subset(table.n_rows(), ratio, seed))
        impute_row(out, e, stats, seed);
    return out;
}

TripleStore sparsify_triples(const TripleStore& store, double ratio, std::uint64_t seed) {
    if (ratio < 0.0 || ratio >= 1.0)
        throw std::invalid_argument("sparsify ratio must be in [0, 1)");
    TripleStore out = store;
    const auto drop = corruption_subset(store.train.size(), ratio, seed);
    out.train.clear();
    std::size_t next = 0;
    for (std::size_t i = 0; i < store.train.size(); ++i) {
        if (next < drop.size() && drop[next] == i) {
            ++next;
            continue;
        }
        out.train.push_back(store.train[i]);
    }
    return out;
}

}  // namespace momok
