#pragma once

#include "sattn/error.hpp"

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

namespace sattn {

// Row-major dense float32 matrix. All exported kernels accumulate in double
// and store back to float.
struct Matrix {
    uint32_t rows = 0;
    uint32_t cols = 0;
    std::vector<float> data; // rows * cols, row-major

    Matrix() = default;
    Matrix(uint32_t r, uint32_t c) : rows(r), cols(c), data(size_t(r) * c, 0.0f) {}
    Matrix(uint32_t r, uint32_t c, std::vector<float> values);

    float& operator()(uint32_t r, uint32_t c) { return data[size_t(r) * cols + c]; }
    float operator()(uint32_t r, uint32_t c) const { return data[size_t(r) * cols + c]; }

    std::span<float> row(uint32_t r) { return {data.data() + size_t(r) * cols, cols}; }
    std::span<const float> row(uint32_t r) const { return {data.data() + size_t(r) * cols, cols}; }

    size_t size() const { return data.size(); }
    bool empty() const { return rows == 0 || cols == 0; }
    bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
    bool all_finite() const;
};

// pcg32: fixed generator so that equal seeds give identical streams everywhere.
// state update: s = s * 6364136223846793005 + inc, output = xsh-rr of old state.
// Stream selection via the increment, as in the reference implementation.
struct SeededRng {
    uint64_t state = 0;
    uint64_t inc = 1;

    explicit SeededRng(uint64_t seed, uint64_t stream = 0);

    uint32_t next_u32();
    // uniform in [0, 1), 24-bit mantissa
    float next_float();
    // standard normal via Box-Muller (cosine branch only, keeps the stream simple)
    float next_gaussian();
};

void fill_gaussian(Matrix& m, SeededRng& rng, float scale = 1.0f);

struct ChannelStats {
    std::vector<float> mean;   // per column
    std::vector<float> stddev; // population std, floored at kStdFloor
};

// Floor applied to per-channel std so AdaIN never divides by zero.
inline constexpr float kStdFloor = 1e-6f;

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

// softmax(a / scale) per row, stabilized by row-max subtraction.
Matrix row_softmax(const Matrix& a, float scale);

// Mean / population std per column over the row (sequence) dimension.
ChannelStats channel_stats(const Matrix& a);

Matrix concat_rows(const Matrix& a, const Matrix& b);
Matrix concat_rows(const Matrix& a, const Matrix& b, const Matrix& c);
Matrix concat_cols(const Matrix& a, const Matrix& b);
Matrix slice_rows(const Matrix& a, uint32_t begin, uint32_t end);
Matrix slice_cols(const Matrix& a, uint32_t begin, uint32_t end);
Matrix scale(const Matrix& a, float s);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);

} // namespace sattn
