#include "pstyle/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>

#include "pstyle/errors.hpp"

namespace pstyle {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'S', 'T', 'C'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kFloat32 = 0;
// Guards against absurd allocations when reading corrupted headers.
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 34;

class Reader {
public:
    Reader(std::istream& in, const std::filesystem::path& path) : in_(in), path_(path) {}

    template <typename U>
    U scalar() {
        U v{};
        bytes(&v, sizeof(U));
        return v;
    }

    std::string string() {
        const auto len = scalar<std::uint32_t>();
        if (len > (1u << 24)) fail("string length out of range");
        std::string s(len, '\0');
        bytes(s.data(), len);
        return s;
    }

    void bytes(void* dst, std::size_t n) {
        in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) fail("unexpected end of file");
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw FormatError(path_.string() + ": " + what);
    }

private:
    std::istream& in_;
    const std::filesystem::path& path_;
};

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void write_u64(std::ostream& out, std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); }
void write_string(std::ostream& out, const std::string& s) {
    write_u32(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

}  // namespace

std::uint64_t StoredTensor::element_count() const {
    return std::accumulate(shape.begin(), shape.end(), std::uint64_t{1}, std::multiplies<>());
}

const StoredTensor& TensorArchive::require(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw SchemaError("missing tensor '" + name + "'");
    return it->second;
}

const std::string& TensorArchive::require_meta(const std::string& key) const {
    auto it = metadata.find(key);
    if (it == metadata.end()) throw SchemaError("missing metadata key '" + key + "'");
    return it->second;
}

void TensorArchive::put(const std::string& name, std::vector<std::uint64_t> shape,
                        std::vector<float> values) {
    StoredTensor t{std::move(shape), std::move(values)};
    if (t.element_count() != t.values.size()) {
        throw ShapeError("tensor '" + name + "' shape does not match its value count");
    }
    tensors[name] = std::move(t);
}

void TensorArchive::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");

    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(metadata.size()));
    for (const auto& [k, v] : metadata) {
        write_string(out, k);
        write_string(out, v);
    }
    write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        write_string(out, name);
        write_u32(out, kFloat32);
        write_u32(out, static_cast<std::uint32_t>(t.shape.size()));
        for (auto d : t.shape) write_u64(out, d);
        write_u64(out, t.values.size() * sizeof(float));
        out.write(reinterpret_cast<const char*>(t.values.data()),
                  static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing '" + path.string() + "'");
}

TensorArchive TensorArchive::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        if (!std::filesystem::exists(path)) throw NotFoundError("no such file: " + path.string());
        throw IoError("cannot open '" + path.string() + "'");
    }
    Reader r(in, path);

    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) r.fail("not a tensor archive (bad magic)");
    if (r.scalar<std::uint32_t>() != kVersion) r.fail("unsupported archive version");

    TensorArchive archive;
    const auto n_meta = r.scalar<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
        auto key = r.string();
        archive.metadata[key] = r.string();
    }
    const auto n_tensors = r.scalar<std::uint32_t>();
    for (std::uint32_t i = 0; i < n_tensors; ++i) {
        auto name = r.string();
        if (r.scalar<std::uint32_t>() != kFloat32) r.fail("tensor '" + name + "' has unsupported dtype");
        const auto ndim = r.scalar<std::uint32_t>();
        if (ndim > 8) r.fail("tensor '" + name + "' has too many dimensions");
        StoredTensor t;
        t.shape.resize(ndim);
        for (auto& d : t.shape) d = r.scalar<std::uint64_t>();
        const auto count = t.element_count();
        if (count > kMaxElements) r.fail("tensor '" + name + "' is implausibly large");
        if (r.scalar<std::uint64_t>() != count * sizeof(float)) {
            r.fail("tensor '" + name + "' byte count does not match its shape");
        }
        t.values.resize(count);
        r.bytes(t.values.data(), count * sizeof(float));
        archive.tensors[name] = std::move(t);
    }
    return archive;
}

}  // namespace pstyle
