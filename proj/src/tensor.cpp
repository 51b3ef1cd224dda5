#include "sattn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>

namespace sattn {

namespace {

std::string shape_str(const Matrix& m) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%ux%u", m.rows, m.cols);
    return buf;
}

} // namespace

Matrix::Matrix(uint32_t r, uint32_t c, std::vector<float> values)
    : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != size_t(r) * c) {
        throw ShapeError("matrix init: " + std::to_string(data.size()) + " values for " +
                         std::to_string(r) + "x" + std::to_string(c));
    }
}

bool Matrix::all_finite() const {
    for (float v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

SeededRng::SeededRng(uint64_t seed, uint64_t stream) {
    state = 0;
    inc = (stream << 1u) | 1u;
    next_u32();
    state += seed;
    next_u32();
}

uint32_t SeededRng::next_u32() {
    uint64_t old = state;
    state = old * 6364136223846793005ULL + inc;
    uint32_t xorshifted = uint32_t(((old >> 18u) ^ old) >> 27u);
    uint32_t rot = uint32_t(old >> 59u);
    return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

float SeededRng::next_float() {
    return float(next_u32() >> 8) * 0x1.0p-24f;
}

float SeededRng::next_gaussian() {
    // u1 in (0,1] so the log is finite
    double u1 = (double(next_u32()) + 1.0) * 0x1.0p-32;
    double u2 = double(next_u32()) * 0x1.0p-32;
    return float(std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2));
}

void fill_gaussian(Matrix& m, SeededRng& rng, float scale) {
    for (float& v : m.data) {
        v = rng.next_gaussian() * scale;
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) {
        throw ShapeError("matmul: " + shape_str(a) + " x " + shape_str(b));
    }
    Matrix out(a.rows, b.cols);
    for (uint32_t i = 0; i < a.rows; ++i) {
        for (uint32_t j = 0; j < b.cols; ++j) {
            double acc = 0.0;
            for (uint32_t k = 0; k < a.cols; ++k) {
                acc += double(a(i, k)) * double(b(k, j));
            }
            out(i, j) = float(acc);
        }
    }
    return out;
}

Matrix transpose(const Matrix& a) {
    Matrix out(a.cols, a.rows);
    for (uint32_t i = 0; i < a.rows; ++i) {
        for (uint32_t j = 0; j < a.cols; ++j) {
            out(j, i) = a(i, j);
        }
    }
    return out;
}

Matrix row_softmax(const Matrix& a, float scale) {
    if (!(scale > 0.0f)) {
        throw ValidationError("row_softmax: scale must be > 0");
    }
    if (!a.all_finite()) {
        throw ValidationError("row_softmax: non-finite input");
    }
    Matrix out(a.rows, a.cols);
    for (uint32_t i = 0; i < a.rows; ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (uint32_t j = 0; j < a.cols; ++j) {
            mx = std::max(mx, double(a(i, j)));
        }
        double sum = 0.0;
        std::vector<double> e(a.cols);
        for (uint32_t j = 0; j < a.cols; ++j) {
            e[j] = std::exp((double(a(i, j)) - mx) / double(scale));
            sum += e[j];
        }
        for (uint32_t j = 0; j < a.cols; ++j) {
            out(i, j) = float(e[j] / sum);
        }
    }
    return out;
}

ChannelStats channel_stats(const Matrix& a) {
    if (a.rows < 1 || a.cols < 1) {
        throw ValidationError("channel_stats: empty matrix");
    }
    ChannelStats st;
    st.mean.resize(a.cols);
    st.stddev.resize(a.cols);
    for (uint32_t c = 0; c < a.cols; ++c) {
        double sum = 0.0;
        for (uint32_t r = 0; r < a.rows; ++r) sum += double(a(r, c));
        double mean = sum / a.rows;
        double sq = 0.0;
        for (uint32_t r = 0; r < a.rows; ++r) {
            double d = double(a(r, c)) - mean;
            sq += d * d;
        }
        double sd = std::sqrt(sq / a.rows);
        st.mean[c] = float(mean);
        st.stddev[c] = std::max(float(sd), kStdFloor);
    }
    return st;
}

Matrix concat_rows(const Matrix& a, const Matrix& b) {
    if (a.cols != b.cols) {
        throw ShapeError("concat_rows: " + shape_str(a) + " / " + shape_str(b));
    }
    Matrix out(a.rows + b.rows, a.cols);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + a.data.size());
    return out;
}

Matrix concat_rows(const Matrix& a, const Matrix& b, const Matrix& c) {
    return concat_rows(concat_rows(a, b), c);
}

Matrix concat_cols(const Matrix& a, const Matrix& b) {
    if (a.rows != b.rows) {
        throw ShapeError("concat_cols: " + shape_str(a) + " / " + shape_str(b));
    }
    Matrix out(a.rows, a.cols + b.cols);
    for (uint32_t r = 0; r < a.rows; ++r) {
        std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
        std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + a.cols);
    }
    return out;
}

Matrix slice_rows(const Matrix& a, uint32_t begin, uint32_t end) {
    if (begin > end || end > a.rows) {
        throw ShapeError("slice_rows: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_str(a));
    }
    Matrix out(end - begin, a.cols);
    std::copy(a.data.begin() + size_t(begin) * a.cols,
              a.data.begin() + size_t(end) * a.cols, out.data.begin());
    return out;
}

Matrix slice_cols(const Matrix& a, uint32_t begin, uint32_t end) {
    if (begin > end || end > a.cols) {
        throw ShapeError("slice_cols: [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") of " + shape_str(a));
    }
    Matrix out(a.rows, end - begin);
    for (uint32_t r = 0; r < a.rows; ++r) {
        std::copy(a.row(r).begin() + begin, a.row(r).begin() + end, out.row(r).begin());
    }
    return out;
}

Matrix scale(const Matrix& a, float s) {
    Matrix out = a;
    for (float& v : out.data) v *= s;
    return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("add: " + shape_str(a) + " / " + shape_str(b));
    }
    Matrix out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Matrix sub(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("sub: " + shape_str(a) + " / " + shape_str(b));
    }
    Matrix out = a;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

} // namespace sattn
