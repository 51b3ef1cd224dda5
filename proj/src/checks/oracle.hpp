#pragma once

// Brute-force reference implementation of the shared attention pipeline.
// Scalar double-precision loops, no calls into the library kernels; this is
// the independent side of the dual-route check and must stay that way.

#include "sattn/sharing.hpp"

#include <cmath>
#include <vector>

namespace sattn::checks {

using Rows = std::vector<std::vector<double>>;

inline Rows to_rows(const Matrix& m) {
    Rows out(m.rows, std::vector<double>(m.cols));
    for (uint32_t r = 0; r < m.rows; ++r) {
        for (uint32_t c = 0; c < m.cols; ++c) out[r][c] = m(r, c);
    }
    return out;
}

inline Rows concat(const Rows& a, const Rows& b) {
    Rows out = a;
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

inline Rows oracle_adain(const Rows& x, const Rows& y) {
    const size_t cols = x.front().size();
    Rows out(x.size(), std::vector<double>(cols));
    for (size_t c = 0; c < cols; ++c) {
        double mx = 0.0, my = 0.0;
        for (const auto& r : x) mx += r[c];
        for (const auto& r : y) my += r[c];
        mx /= double(x.size());
        my /= double(y.size());
        double vx = 0.0, vy = 0.0;
        for (const auto& r : x) vx += (r[c] - mx) * (r[c] - mx);
        for (const auto& r : y) vy += (r[c] - my) * (r[c] - my);
        double sx = std::max(std::sqrt(vx / double(x.size())), double(kStdFloor));
        double sy = std::max(std::sqrt(vy / double(y.size())), double(kStdFloor));
        for (size_t r = 0; r < x.size(); ++r) {
            out[r][c] = sy * ((x[r][c] - mx) / sx) + my;
        }
    }
    return out;
}

struct OraclePos {
    double i = 0.0;
    double j = 0.0;
};

inline std::vector<double> oracle_rotate_row(const std::vector<double>& row, OraclePos pos,
                                             double base) {
    const size_t d = row.size();
    const size_t ci = d / 2;
    std::vector<double> out(d);
    for (size_t p = 0; p + 2 <= ci; p += 2) {
        double theta = std::pow(base, -double(p) / double(ci));
        double a = theta * pos.i;
        out[p] = row[p] * std::cos(a) - row[p + 1] * std::sin(a);
        out[p + 1] = row[p] * std::sin(a) + row[p + 1] * std::cos(a);
    }
    const size_t cj = d - ci;
    for (size_t p = 0; p + 2 <= cj; p += 2) {
        double theta = std::pow(base, -double(p) / double(cj));
        double a = theta * pos.j;
        out[ci + p] = row[ci + p] * std::cos(a) - row[ci + p + 1] * std::sin(a);
        out[ci + p + 1] = row[ci + p] * std::sin(a) + row[ci + p + 1] * std::cos(a);
    }
    return out;
}

struct OracleSetup {
    SharingMode mode = SharingMode::vanilla;
    double lambda = 1.0;
    bool shifted = false;
    uint32_t shift_offset = 0; // 0 -> grid width
    uint32_t grid_h = 0, grid_w = 0;
    uint32_t text_len = 0;
    double base = 10000.0;
};

// Full pipeline: assemble per mode, rotate, softmax((Q Kt)/sqrt(d_k)) V.
inline Rows oracle_attention(const QkvBundle& tar, const QkvBundle* ref,
                             const OracleSetup& s) {
    const uint32_t m = s.text_len;
    const uint32_t h = s.grid_h, w = s.grid_w;
    const uint32_t off = s.shifted ? (s.shift_offset ? s.shift_offset : w) : 0;

    std::vector<OraclePos> tgt_pos;
    for (uint32_t k = 0; k < m; ++k) tgt_pos.push_back({0.0, 0.0});
    for (uint32_t i = 0; i < h; ++i) {
        for (uint32_t j = 0; j < w; ++j) tgt_pos.push_back({double(i), double(j)});
    }
    std::vector<OraclePos> ref_img_pos;
    for (uint32_t i = 0; i < h; ++i) {
        for (uint32_t j = 0; j < w; ++j) ref_img_pos.push_back({double(i), double(j + off)});
    }

    Rows q, k, v;
    std::vector<OraclePos> key_pos;
    const Rows tq_txt = to_rows(tar.q_txt), tq_img = to_rows(tar.q_img);
    const Rows tk_txt = to_rows(tar.k_txt), tk_img = to_rows(tar.k_img);
    const Rows tv_txt = to_rows(tar.v_txt), tv_img = to_rows(tar.v_img);

    if (s.mode == SharingMode::vanilla) {
        q = concat(tq_txt, tq_img);
        k = concat(tk_txt, tk_img);
        v = concat(tv_txt, tv_img);
        key_pos = tgt_pos;
    } else if (s.mode == SharingMode::naive) {
        const Rows rq = concat(to_rows(ref->q_txt), to_rows(ref->q_img));
        const Rows rk = concat(to_rows(ref->k_txt), to_rows(ref->k_img));
        const Rows rv = concat(to_rows(ref->v_txt), to_rows(ref->v_img));
        q = oracle_adain(concat(tq_txt, tq_img), rq);
        k = concat(oracle_adain(concat(tk_txt, tk_img), rk), rk);
        v = concat(concat(tv_txt, tv_img), rv);
        key_pos = tgt_pos;
        for (uint32_t i = 0; i < m; ++i) key_pos.push_back({0.0, 0.0});
        key_pos.insert(key_pos.end(), ref_img_pos.begin(), ref_img_pos.end());
    } else {
        const Rows rq_img = to_rows(ref->q_img);
        const Rows rk_img = to_rows(ref->k_img);
        q = concat(tq_txt, oracle_adain(tq_img, rq_img));
        Rows scaled = rk_img;
        for (auto& row : scaled) {
            for (double& x : row) x *= s.lambda;
        }
        k = concat(concat(tk_txt, oracle_adain(tk_img, rk_img)), scaled);
        v = concat(concat(tv_txt, tv_img), to_rows(ref->v_img));
        key_pos = tgt_pos;
        key_pos.insert(key_pos.end(), ref_img_pos.begin(), ref_img_pos.end());
    }

    const size_t d_k = q.front().size();
    Rows q_rot(q.size()), k_rot(k.size());
    for (size_t r = 0; r < q.size(); ++r) q_rot[r] = oracle_rotate_row(q[r], tgt_pos[r], s.base);
    for (size_t r = 0; r < k.size(); ++r) k_rot[r] = oracle_rotate_row(k[r], key_pos[r], s.base);

    Rows out(q.size(), std::vector<double>(d_k, 0.0));
    const double inv = 1.0 / std::sqrt(double(d_k));
    for (size_t r = 0; r < q.size(); ++r) {
        std::vector<double> logits(k.size());
        double mx = -1e300;
        for (size_t c = 0; c < k.size(); ++c) {
            double dot = 0.0;
            for (size_t t = 0; t < d_k; ++t) dot += q_rot[r][t] * k_rot[c][t];
            logits[c] = dot * inv;
            mx = std::max(mx, logits[c]);
        }
        double sum = 0.0;
        for (double& l : logits) {
            l = std::exp(l - mx);
            sum += l;
        }
        for (size_t c = 0; c < k.size(); ++c) {
            const double wgt = logits[c] / sum;
            for (size_t t = 0; t < d_k; ++t) out[r][t] += wgt * v[c][t];
        }
    }
    return out;
}

} // namespace sattn::checks
