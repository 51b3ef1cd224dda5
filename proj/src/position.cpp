#include "sattn/position.hpp"

#include "sattn/tensor_io.hpp"

#include <cmath>

namespace sattn {

RopeParams RopeParams::even_split(uint32_t head_dim, float base) {
    RopeParams p;
    p.head_dim = head_dim;
    p.base = base;
    p.axis_i_channels = head_dim / 2;
    p.validate();
    return p;
}

void RopeParams::validate() const {
    if (head_dim == 0 || head_dim % 2 != 0) {
        throw ValidationError("rope: head_dim must be positive and even");
    }
    if (axis_i_channels % 2 != 0 || axis_i_channels > head_dim ||
        (head_dim - axis_i_channels) % 2 != 0) {
        throw ValidationError("rope: each axis needs an even channel count");
    }
    if (!(base > 1.0f)) {
        throw ValidationError("rope: base must be > 1");
    }
}

PositionTable build_positions(Grid grid, uint32_t text_len, ShiftMode mode) {
    if (grid.h == 0 || grid.w == 0) {
        throw ValidationError("build_positions: zero-sized grid");
    }
    PositionTable t;
    t.grid = grid;
    t.text_len = text_len;
    t.shift = mode;
    t.entries.reserve(size_t(text_len) + grid.tokens());
    for (uint32_t k = 0; k < text_len; ++k) {
        t.entries.push_back({0, 0});
    }
    uint32_t off = mode.shifted ? mode.effective_offset(grid) : 0;
    for (uint32_t i = 0; i < grid.h; ++i) {
        for (uint32_t j = 0; j < grid.w; ++j) {
            t.entries.push_back({i, j + off});
        }
    }
    return t;
}

std::vector<GridPos> image_grid_positions(Grid grid, ShiftMode mode) {
    PositionTable t = build_positions(grid, 0, mode);
    return t.entries;
}

Matrix rope_rotate(const Matrix& vectors, std::span<const GridPos> entries,
                   const RopeParams& params) {
    params.validate();
    if (vectors.rows != entries.size()) {
        throw ShapeError("rope_rotate: " + std::to_string(vectors.rows) + " rows vs " +
                         std::to_string(entries.size()) + " positions");
    }
    if (vectors.cols != params.head_dim) {
        throw ShapeError("rope_rotate: head_dim mismatch");
    }
    Matrix out(vectors.rows, vectors.cols);
    const uint32_t ci = params.axis_i_channels;
    const uint32_t cj = params.axis_j_channels();
    for (uint32_t r = 0; r < vectors.rows; ++r) {
        const double pos_i = entries[r].i;
        const double pos_j = entries[r].j;
        for (uint32_t p = 0; p + 2 <= ci; p += 2) {
            double theta = std::pow(double(params.base), -double(p) / double(ci));
            double a = theta * pos_i;
            double ca = std::cos(a), sa = std::sin(a);
            double x = vectors(r, p), y = vectors(r, p + 1);
            out(r, p) = float(x * ca - y * sa);
            out(r, p + 1) = float(x * sa + y * ca);
        }
        for (uint32_t p = 0; p + 2 <= cj; p += 2) {
            double theta = std::pow(double(params.base), -double(p) / double(cj));
            double a = theta * pos_j;
            double ca = std::cos(a), sa = std::sin(a);
            double x = vectors(r, ci + p), y = vectors(r, ci + p + 1);
            out(r, ci + p) = float(x * ca - y * sa);
            out(r, ci + p + 1) = float(x * sa + y * ca);
        }
    }
    return out;
}

void write_position_table(const std::filesystem::path& path, const PositionTable& table) {
    std::vector<uint32_t> flat;
    flat.reserve(table.entries.size() * 2);
    for (const GridPos& p : table.entries) {
        flat.push_back(p.i);
        flat.push_back(p.j);
    }
    write_u32_tensor(path, {uint32_t(table.entries.size()), 2u}, flat);
}

std::vector<GridPos> read_position_entries(const std::filesystem::path& path) {
    auto [dims, values] = read_u32_tensor(path);
    if (dims.size() != 2 || dims[1] != 2) {
        throw IoError("expected Ex2 u32 table in " + path.string());
    }
    std::vector<GridPos> entries(dims[0]);
    for (uint32_t e = 0; e < dims[0]; ++e) {
        entries[e] = {values[size_t(e) * 2], values[size_t(e) * 2 + 1]};
    }
    return entries;
}

} // namespace sattn
