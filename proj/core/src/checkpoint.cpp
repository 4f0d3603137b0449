#include "momok/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "momok/errors.hpp"

namespace momok {

namespace {

constexpr char kMagic[4] = {'M', 'O', 'M', 'K'};

void write_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw DataError("checkpoint: truncated while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) |
           (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(out, bits);
}

float read_f32(std::istream& in, const std::string& what) {
    const std::uint32_t bits = read_u32(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamStore& store) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("checkpoint: cannot open '" + path + "' for writing");
    out.write(kMagic, 4);
    write_u32(out, kCheckpointVersion);
    write_u32(out, static_cast<std::uint32_t>(store.groups().size()));
    for (const auto& g : store.groups()) {
        write_u32(out, static_cast<std::uint32_t>(g.name.size()));
        out.write(g.name.data(), static_cast<std::streamsize>(g.name.size()));
        write_u32(out, static_cast<std::uint32_t>(g.shape.size()));
        for (std::size_t d : g.shape) write_u32(out, static_cast<std::uint32_t>(d));
        for (float v : g.value) write_f32(out, v);
    }
    if (!out) throw DataError("checkpoint: write failed for '" + path + "'");
}

ParamStore load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint: cannot open '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("checkpoint: bad magic in '" + path + "'");
    const std::uint32_t version = read_u32(in, "version");
    if (version != kCheckpointVersion)
        throw CompatError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t count = read_u32(in, "group count");
    ParamStore store;
    for (std::uint32_t gi = 0; gi < count; ++gi) {
        const std::uint32_t name_len = read_u32(in, "name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len))
            throw DataError("checkpoint: truncated group name");
        const std::uint32_t rank = read_u32(in, "rank");
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = read_u32(in, "dim");
        auto& g = store.add(name, shape);
        for (auto& v : g.value) v = read_f32(in, "data");
    }
    return store;
}

void load_checkpoint_into(const std::string& path, ParamStore& store) {
    ParamStore loaded = load_checkpoint(path);
    if (loaded.groups().size() != store.groups().size())
        throw CompatError("checkpoint: group count mismatch (file has " +
                          std::to_string(loaded.groups().size()) + ", expected " +
                          std::to_string(store.groups().size()) + ")");
    for (auto& g : store.groups()) {
        if (!loaded.has(g.name))
            throw CompatError("checkpoint: missing group '" + g.name + "'");
        const auto& src = loaded.at(g.name);
        if (src.shape != g.shape)
            throw CompatError("checkpoint: shape mismatch for group '" + g.name + "'");
        g.value = src.value;
    }
}

}  // namespace momok
