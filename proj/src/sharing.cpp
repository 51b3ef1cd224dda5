#include "sattn/sharing.hpp"

#include <cmath>

namespace sattn {

void QkvBundle::check_coherent() const {
    const uint32_t m = q_txt.rows;
    const uint32_t n = q_img.rows;
    const uint32_t w = q_txt.cols;
    if (k_txt.rows != m || v_txt.rows != m || k_img.rows != n || v_img.rows != n) {
        throw ShapeError("qkv bundle: segment row counts disagree");
    }
    for (const Matrix* mat : {&q_txt, &k_txt, &v_txt, &q_img, &k_img, &v_img}) {
        if (mat->cols != w) throw ShapeError("qkv bundle: column widths disagree");
    }
}

SharingMode parse_sharing_mode(const std::string& s) {
    if (s == "vanilla") return SharingMode::vanilla;
    if (s == "naive") return SharingMode::naive;
    if (s == "selective") return SharingMode::selective;
    throw ValidationError("unknown sharing mode: " + s);
}

std::string to_string(SharingMode m) {
    switch (m) {
        case SharingMode::vanilla: return "vanilla";
        case SharingMode::naive: return "naive";
        case SharingMode::selective: return "selective";
    }
    return "?";
}

void SharingConfig::validate(uint32_t layer_count) const {
    if (!(lambda > 0.0f)) {
        throw ValidationError("sharing: lambda must be > 0");
    }
    for (uint32_t l : layer_set) {
        if (l >= layer_count) {
            throw ValidationError("sharing: layer " + std::to_string(l) + " outside [0, " +
                                  std::to_string(layer_count) + ")");
        }
    }
}

Matrix adain(const Matrix& x, const Matrix& y) {
    if (x.cols != y.cols) {
        throw ShapeError("adain: channel count mismatch");
    }
    if (x.rows == 0 || y.rows == 0) {
        throw ValidationError("adain: empty input");
    }
    ChannelStats sx = channel_stats(x);
    ChannelStats sy = channel_stats(y);
    Matrix out(x.rows, x.cols);
    for (uint32_t c = 0; c < x.cols; ++c) {
        const double mx = sx.mean[c], dx = sx.stddev[c];
        const double my = sy.mean[c], dy = sy.stddev[c];
        for (uint32_t r = 0; r < x.rows; ++r) {
            out(r, c) = float(dy * ((double(x(r, c)) - mx) / dx) + my);
        }
    }
    return out;
}

namespace {

void check_share_dims(const QkvBundle& tar, const QkvBundle& ref) {
    tar.check_coherent();
    ref.check_coherent();
    if (tar.text_len() != ref.text_len() || tar.image_len() != ref.image_len() ||
        tar.width() != ref.width()) {
        throw ShapeError("share: target and reference bundle dims disagree");
    }
}

} // namespace

SharedQkv naive_share(const QkvBundle& tar, const QkvBundle& ref) {
    check_share_dims(tar, ref);
    Matrix q_tar = concat_rows(tar.q_txt, tar.q_img);
    Matrix q_ref = concat_rows(ref.q_txt, ref.q_img);
    Matrix k_tar = concat_rows(tar.k_txt, tar.k_img);
    Matrix k_ref = concat_rows(ref.k_txt, ref.k_img);
    SharedQkv out;
    out.q = adain(q_tar, q_ref);
    out.k = concat_rows(adain(k_tar, k_ref), k_ref);
    out.v = concat_rows(concat_rows(tar.v_txt, tar.v_img), concat_rows(ref.v_txt, ref.v_img));
    return out;
}

SharedQkv selective_share(const QkvBundle& tar, const QkvBundle& ref, float lambda) {
    check_share_dims(tar, ref);
    if (!(lambda > 0.0f)) {
        throw ValidationError("selective_share: lambda must be > 0");
    }
    SharedQkv out;
    out.q = concat_rows(tar.q_txt, adain(tar.q_img, ref.q_img));
    out.k = concat_rows(tar.k_txt, adain(tar.k_img, ref.k_img),
                        scale_ref_keys(ref.k_img, lambda));
    out.v = concat_rows(tar.v_txt, tar.v_img, ref.v_img);
    return out;
}

Matrix scale_ref_keys(const Matrix& k_ref_img, float lambda) {
    if (!(lambda > 0.0f)) {
        throw ValidationError("scale_ref_keys: lambda must be > 0");
    }
    return scale(k_ref_img, lambda);
}

AttnKind layer_policy(uint32_t layer, const SharingConfig& cfg) {
    if (cfg.mode == SharingMode::vanilla) return AttnKind::vanilla;
    return cfg.layer_set.count(layer) ? AttnKind::shared : AttnKind::vanilla;
}

AttentionPositions make_attention_positions(Grid grid, uint32_t text_len, ShiftMode shift,
                                            const RopeParams& rope) {
    AttentionPositions p;
    p.target = build_positions(grid, text_len, ShiftMode::identity());
    p.reference = build_positions(grid, text_len, shift);
    p.rope = rope;
    return p;
}

Matrix shared_mm_attention(const QkvBundle& tar, const QkvBundle* ref, const SharingConfig& cfg,
                           const AttentionPositions& positions, AttentionDiag* diag) {
    tar.check_coherent();
    const uint32_t m = tar.text_len();
    const uint32_t n = tar.image_len();
    const uint32_t d_k = tar.width();
    if (positions.target.entries.size() != size_t(m) + n) {
        throw ShapeError("attention: target position table does not cover M+N rows");
    }
    if (positions.rope.head_dim != d_k) {
        throw ShapeError("attention: rope head_dim != d_k");
    }

    const AttnKind kind = (cfg.mode == SharingMode::vanilla) ? AttnKind::vanilla : AttnKind::shared;
    if (kind == AttnKind::shared && ref == nullptr) {
        throw ConfigError("attention: sharing requested without a reference bundle");
    }

    Matrix qf, kf, vf;
    std::vector<GridPos> key_pos;
    const auto& tgt_entries = positions.target.entries;
    if (kind == AttnKind::vanilla) {
        qf = concat_rows(tar.q_txt, tar.q_img);
        kf = concat_rows(tar.k_txt, tar.k_img);
        vf = concat_rows(tar.v_txt, tar.v_img);
        key_pos = tgt_entries;
    } else if (cfg.mode == SharingMode::naive) {
        SharedQkv s = naive_share(tar, *ref);
        qf = std::move(s.q);
        kf = std::move(s.k);
        vf = std::move(s.v);
        key_pos = tgt_entries; // aligned target keys, native coordinates
        key_pos.insert(key_pos.end(), positions.reference.entries.begin(),
                       positions.reference.entries.end());
    } else {
        SharedQkv s = selective_share(tar, *ref, cfg.lambda);
        qf = std::move(s.q);
        kf = std::move(s.k);
        vf = std::move(s.v);
        key_pos = tgt_entries;
        auto ref_img = positions.reference.image_entries();
        key_pos.insert(key_pos.end(), ref_img.begin(), ref_img.end());
    }
    if (kf.rows != key_pos.size()) {
        throw ShapeError("attention: key position table does not cover assembled keys");
    }

    Matrix q_rot = rope_rotate(qf, tgt_entries, positions.rope);
    Matrix k_rot = rope_rotate(kf, key_pos, positions.rope);
    Matrix logits = matmul(q_rot, transpose(k_rot));
    const float inv = 1.0f / std::sqrt(float(d_k));
    Matrix scaled = scale(logits, inv);
    Matrix weights = row_softmax(scaled, 1.0f);
    Matrix out = matmul(weights, vf);
    if (diag) {
        diag->logits = std::move(scaled);
        diag->weights = weights;
    }
    return out;
}

} // namespace sattn
