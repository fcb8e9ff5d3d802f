#include "calvin/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace calvin {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace {

constexpr char kMagic[] = "CALVIN1";
constexpr size_t kMagicLen = 7;

void write_u64(std::ostream& os, uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint64_t read_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void checkpoint_save(const std::string& path, const std::map<std::string, Tensor>& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
    os.write(kMagic, kMagicLen);
    write_u64(os, params.size());
    for (const auto& [name, t] : params) {
        write_u64(os, name.size());
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64(os, static_cast<uint64_t>(t.rank()));
        for (int e : t.shape()) write_u64(os, static_cast<uint64_t>(e));
        os.write(reinterpret_cast<const char*>(t.data()),
                 static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::map<std::string, Tensor> checkpoint_load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
    char magic[kMagicLen];
    is.read(magic, kMagicLen);
    if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
        throw std::runtime_error("checkpoint: bad magic in '" + path + "'");

    std::map<std::string, Tensor> out;
    const uint64_t count = read_u64(is);
    for (uint64_t i = 0; i < count; ++i) {
        const uint64_t name_len = read_u64(is);
        std::string name(name_len, '\0');
        is.read(name.data(), static_cast<std::streamsize>(name_len));
        const uint64_t rank = read_u64(is);
        std::vector<int> shape(rank);
        size_t numel = 1;
        for (uint64_t d = 0; d < rank; ++d) {
            const uint64_t e = read_u64(is);
            if (e == 0 || e > (1ULL << 31))
                throw std::runtime_error("checkpoint: bad extent in '" + name + "'");
            shape[d] = static_cast<int>(e);
            numel *= e;
        }
        std::vector<float> data(numel);
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(numel * sizeof(float)));
        if (!is) throw std::runtime_error("checkpoint: truncated tensor '" + name + "'");
        out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return out;
}

}  // namespace calvin
