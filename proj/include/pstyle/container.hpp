#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace pstyle {

/// One named entry of a tensor archive: float32 values with an explicit shape.
struct StoredTensor {
    std::vector<std::uint64_t> shape;
    std::vector<float> values;

    std::uint64_t element_count() const;
};

/// Flat archive mapping names to float32 tensors plus a string metadata table.
///
/// On-disk layout (all integers little-endian):
///
///     magic "PSTC", u32 version (= 1)
///     u32 metadata_count, then per entry: u32 key_len, key, u32 value_len, value
///     u32 tensor_count, then per tensor:
///         u32 name_len, name, u32 dtype (0 = float32), u32 ndim,
///         u64 dims[ndim], u64 byte_count, row-major little-endian data
///
/// Entries are written in lexicographic name order so equal archives produce
/// identical bytes.
class TensorArchive {
public:
    std::map<std::string, std::string> metadata;
    std::map<std::string, StoredTensor> tensors;

    bool contains(const std::string& name) const { return tensors.count(name) != 0; }

    /// Throws SchemaError naming the tensor when absent.
    const StoredTensor& require(const std::string& name) const;
    /// Throws SchemaError naming the key when absent.
    const std::string& require_meta(const std::string& key) const;

    void put(const std::string& name, std::vector<std::uint64_t> shape, std::vector<float> values);

    void save(const std::filesystem::path& path) const;
    static TensorArchive load(const std::filesystem::path& path);
};

}  // namespace pstyle
