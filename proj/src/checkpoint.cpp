#include "sid/checkpoint.hpp"

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace sid {

static_assert(sizeof(double) == 8, "float64 storage assumed");

const Tensor* Archive::find(const std::string& name) const {
    for (const auto& [n, t] : arrays)
        if (n == name) return &t;
    return nullptr;
}

const Tensor& Archive::require(const std::string& name) const {
    const Tensor* t = find(name);
    if (!t) throw std::runtime_error("archive: missing array '" + name + "'");
    return *t;
}

namespace {

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw std::runtime_error("archive: truncated file");
    return v;
}

constexpr char kMagic[4] = {'S', 'I', 'D', 'C'};

}  // namespace

void save_archive(const std::string& path, const Archive& archive) {
    namespace fs = std::filesystem;
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("archive: cannot open '" + tmp + "' for writing");
        os.write(kMagic, 4);
        write_pod<uint32_t>(os, kArchiveVersion);
        std::string meta = archive.meta.dump();
        write_pod<uint64_t>(os, meta.size());
        os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
        write_pod<uint32_t>(os, static_cast<uint32_t>(archive.arrays.size()));
        for (const auto& [name, t] : archive.arrays) {
            if (name.size() > 0xFFFF) throw std::runtime_error("archive: array name too long");
            write_pod<uint16_t>(os, static_cast<uint16_t>(name.size()));
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            write_pod<uint8_t>(os, 0);  // dtype float64
            write_pod<uint8_t>(os, static_cast<uint8_t>(t.ndim()));
            for (int d = 0; d < t.ndim(); ++d) write_pod<uint32_t>(os, static_cast<uint32_t>(t.dim(d)));
            os.write(reinterpret_cast<const char*>(t.data()),
                     static_cast<std::streamsize>(t.numel() * sizeof(double)));
        }
        if (!os) throw std::runtime_error("archive: write failed for '" + tmp + "'");
    }
    fs::rename(tmp, path);
}

Archive load_archive(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("archive: cannot open '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (!is || magic[0] != 'S' || magic[1] != 'I' || magic[2] != 'D' || magic[3] != 'C')
        throw std::runtime_error("archive: '" + path + "' is not a checkpoint container");
    uint32_t version = read_pod<uint32_t>(is);
    if (version != kArchiveVersion)
        throw std::runtime_error("archive: '" + path + "' has format version " +
                                 std::to_string(version) + ", this build reads version " +
                                 std::to_string(kArchiveVersion));
    uint64_t meta_len = read_pod<uint64_t>(is);
    std::string meta(meta_len, '\0');
    is.read(meta.data(), static_cast<std::streamsize>(meta_len));
    if (!is) throw std::runtime_error("archive: truncated metadata");

    Archive a;
    try {
        a.meta = nlohmann::json::parse(meta);
    } catch (const std::exception& e) {
        throw std::runtime_error(std::string("archive: corrupt metadata: ") + e.what());
    }
    uint32_t count = read_pod<uint32_t>(is);
    for (uint32_t i = 0; i < count; ++i) {
        uint16_t name_len = read_pod<uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint8_t dtype = read_pod<uint8_t>(is);
        if (dtype != 0) throw std::runtime_error("archive: unsupported dtype");
        uint8_t ndim = read_pod<uint8_t>(is);
        std::vector<int> shape(ndim);
        for (int d = 0; d < ndim; ++d) shape[d] = static_cast<int>(read_pod<uint32_t>(is));
        Tensor t(shape);
        is.read(reinterpret_cast<char*>(t.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(double)));
        if (!is) throw std::runtime_error("archive: truncated array '" + name + "'");
        a.arrays.emplace_back(std::move(name), std::move(t));
    }
    return a;
}

}  // namespace sid
