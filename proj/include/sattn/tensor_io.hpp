#pragma once

#include "sattn/tensor.hpp"

#include <filesystem>
#include <vector>

namespace sattn {

// Binary tensor file format, used repo-wide. Little-endian throughout.
//
//   magic   "SATN"          4 bytes
//   version u8              1 = f32 payload, 2 = u32 payload (position tables)
//   rank    u8
//   dims    rank x u32
//   payload prod(dims) x 4 bytes, row-major
//
// Round-trips must be bit-exact.

struct TensorFile {
    std::vector<uint32_t> dims;
    std::vector<float> values;
};

void write_tensor(const std::filesystem::path& path, const std::vector<uint32_t>& dims,
                  std::span<const float> values);
TensorFile read_tensor(const std::filesystem::path& path);

void write_matrix(const std::filesystem::path& path, const Matrix& m);
Matrix read_matrix(const std::filesystem::path& path);

// u32 variant (version byte 2), same header layout.
void write_u32_tensor(const std::filesystem::path& path, const std::vector<uint32_t>& dims,
                      std::span<const uint32_t> values);
std::pair<std::vector<uint32_t>, std::vector<uint32_t>> read_u32_tensor(
    const std::filesystem::path& path);

// FNV-1a 64-bit over the raw file bytes, as a lowercase hex string.
std::string file_hash_hex(const std::filesystem::path& path);

} // namespace sattn
