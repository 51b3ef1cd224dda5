#pragma once

#include "sattn/tensor.hpp"

#include <filesystem>

namespace sattn {

struct Grid {
    uint32_t h = 0;
    uint32_t w = 0;
    uint32_t tokens() const { return h * w; }
};

struct GridPos {
    uint32_t i = 0; // row
    uint32_t j = 0; // column
    bool operator==(const GridPos&) const = default;
};

// identity keeps the native (i,j) grid; shifted remaps image tokens to
// (i, j + offset) so a reference occupies a disjoint coordinate block.
struct ShiftMode {
    bool shifted = false;
    uint32_t offset = 0; // ignored when !shifted; 0 means "use grid width"

    static ShiftMode identity() { return {}; }
    static ShiftMode shift_by(uint32_t off) { return {true, off}; }
    uint32_t effective_offset(const Grid& g) const { return offset == 0 ? g.w : offset; }
};

// Per-token positional indices: text tokens first (all at (0,0)), then the
// h*w image tokens in row-major order.
struct PositionTable {
    std::vector<GridPos> entries;
    Grid grid;
    uint32_t text_len = 0;
    ShiftMode shift;

    std::span<const GridPos> text_entries() const { return {entries.data(), text_len}; }
    std::span<const GridPos> image_entries() const {
        return {entries.data() + text_len, entries.size() - text_len};
    }
};

// 2D rotary embedding parameters. head_dim channels split between the i-axis
// and the j-axis; each axis rotates its channel pairs by base^(-2p/A) * pos.
struct RopeParams {
    uint32_t head_dim = 0;
    float base = 10000.0f;
    uint32_t axis_i_channels = 0; // remaining channels rotate along j

    static RopeParams even_split(uint32_t head_dim, float base = 10000.0f);
    uint32_t axis_j_channels() const { return head_dim - axis_i_channels; }
    void validate() const;
};

PositionTable build_positions(Grid grid, uint32_t text_len, ShiftMode mode);

// Image-token entries only (no text rows); used for selective key layouts.
std::vector<GridPos> image_grid_positions(Grid grid, ShiftMode mode);

// Rotates each row of `vectors` by its entry's (i,j) angles. Orthogonal, so
// row norms are preserved and q.k depends only on relative position.
Matrix rope_rotate(const Matrix& vectors, std::span<const GridPos> entries,
                   const RopeParams& params);

// Tensor-format (u32 variant) persistence; entries only, metadata is context.
void write_position_table(const std::filesystem::path& path, const PositionTable& table);
std::vector<GridPos> read_position_entries(const std::filesystem::path& path);

} // namespace sattn
