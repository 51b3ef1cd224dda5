#include "sattn/tensor_io.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace sattn {

namespace {

constexpr char kMagic[4] = {'S', 'A', 'T', 'N'};
constexpr uint8_t kVersionF32 = 1;
constexpr uint8_t kVersionU32 = 2;

static_assert(sizeof(float) == 4);

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {
        static_cast<unsigned char>(v & 0xff),
        static_cast<unsigned char>((v >> 8) & 0xff),
        static_cast<unsigned char>((v >> 16) & 0xff),
        static_cast<unsigned char>((v >> 24) & 0xff),
    };
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f, const std::filesystem::path& path) {
    unsigned char b[4];
    if (!f.read(reinterpret_cast<char*>(b), 4)) {
        throw IoError("truncated tensor file: " + path.string());
    }
    return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) | (uint32_t(b[3]) << 24);
}

size_t checked_count(const std::vector<uint32_t>& dims) {
    size_t n = 1;
    for (uint32_t d : dims) n *= d;
    return n;
}

void write_raw(const std::filesystem::path& path, uint8_t version,
               const std::vector<uint32_t>& dims, const void* payload, size_t payload_words) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for write: " + path.string());
    f.write(kMagic, 4);
    f.put(char(version));
    f.put(char(dims.size()));
    for (uint32_t d : dims) put_u32(f, d);
    // payload words are 4-byte little-endian values; host is little-endian here
    f.write(reinterpret_cast<const char*>(payload), std::streamsize(payload_words * 4));
    if (!f) throw IoError("write failed: " + path.string());
}

std::pair<std::vector<uint32_t>, std::ifstream> read_header(const std::filesystem::path& path,
                                                            uint8_t expect_version) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    char magic[4];
    if (!f.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
        throw IoError("bad magic in tensor file: " + path.string());
    }
    int version = f.get();
    int rank = f.get();
    if (version != expect_version) {
        throw IoError("unexpected tensor version " + std::to_string(version) + " in " +
                      path.string());
    }
    if (rank < 1 || rank > 8) {
        throw IoError("unsupported tensor rank in " + path.string());
    }
    std::vector<uint32_t> dims(static_cast<size_t>(rank));
    for (auto& d : dims) d = get_u32(f, path);
    return {std::move(dims), std::move(f)};
}

} // namespace

void write_tensor(const std::filesystem::path& path, const std::vector<uint32_t>& dims,
                  std::span<const float> values) {
    if (values.size() != checked_count(dims)) {
        throw ShapeError("write_tensor: payload size does not match dims");
    }
    write_raw(path, kVersionF32, dims, values.data(), values.size());
}

TensorFile read_tensor(const std::filesystem::path& path) {
    auto [dims, f] = read_header(path, kVersionF32);
    TensorFile t;
    t.dims = dims;
    t.values.resize(checked_count(dims));
    if (!f.read(reinterpret_cast<char*>(t.values.data()), std::streamsize(t.values.size() * 4))) {
        throw IoError("truncated tensor payload: " + path.string());
    }
    char extra;
    if (f.read(&extra, 1)) {
        throw IoError("trailing bytes in tensor file: " + path.string());
    }
    return t;
}

void write_matrix(const std::filesystem::path& path, const Matrix& m) {
    write_tensor(path, {m.rows, m.cols}, m.data);
}

Matrix read_matrix(const std::filesystem::path& path) {
    TensorFile t = read_tensor(path);
    if (t.dims.size() != 2) {
        throw IoError("expected rank-2 tensor in " + path.string());
    }
    return Matrix(t.dims[0], t.dims[1], std::move(t.values));
}

void write_u32_tensor(const std::filesystem::path& path, const std::vector<uint32_t>& dims,
                      std::span<const uint32_t> values) {
    if (values.size() != checked_count(dims)) {
        throw ShapeError("write_u32_tensor: payload size does not match dims");
    }
    write_raw(path, kVersionU32, dims, values.data(), values.size());
}

std::pair<std::vector<uint32_t>, std::vector<uint32_t>> read_u32_tensor(
    const std::filesystem::path& path) {
    auto [dims, f] = read_header(path, kVersionU32);
    std::vector<uint32_t> values(checked_count(dims));
    if (!f.read(reinterpret_cast<char*>(values.data()), std::streamsize(values.size() * 4))) {
        throw IoError("truncated tensor payload: " + path.string());
    }
    return {std::move(dims), std::move(values)};
}

std::string file_hash_hex(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for hashing: " + path.string());
    uint64_t h = 1469598103934665603ULL;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        for (std::streamsize i = 0; i < f.gcount(); ++i) {
            h ^= uint64_t(static_cast<unsigned char>(buf[i]));
            h *= 1099511628211ULL;
        }
        if (f.eof()) break;
    }
    char out[17];
    std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
    return out;
}

} // namespace sattn
