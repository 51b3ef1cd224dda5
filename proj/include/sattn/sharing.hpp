#pragma once

#include "sattn/position.hpp"
#include "sattn/tensor.hpp"

#include <set>
#include <string>

namespace sattn {

// Q/K/V of one stream at one layer, split into text and image segments.
// Column width is d_k when used per attention head, H*d_k at layer level.
struct QkvBundle {
    Matrix q_txt, k_txt, v_txt; // M x width
    Matrix q_img, k_img, v_img; // N x width

    uint32_t text_len() const { return q_txt.rows; }
    uint32_t image_len() const { return q_img.rows; }
    uint32_t width() const { return q_txt.cols; }
    void check_coherent() const;
};

enum class SharingMode { vanilla, naive, selective };

SharingMode parse_sharing_mode(const std::string& s);
std::string to_string(SharingMode m);

// The full experiment knob set.
struct SharingConfig {
    SharingMode mode = SharingMode::selective;
    float lambda = 1.1f;          // reference key scale
    std::set<uint32_t> layer_set; // layers where sharing is active
    ShiftMode shift = ShiftMode::shift_by(0); // 0 -> shift by grid width

    void validate(uint32_t layer_count) const;
};

enum class AttnKind { vanilla, shared };

struct SharedQkv {
    Matrix q, k, v;
};

// Renormalizes x's per-channel statistics to match y's. Statistics run over
// the row (sequence) dimension; std is floored at kStdFloor.
Matrix adain(const Matrix& x, const Matrix& y);

// Full-sequence sharing: AdaIN-aligned target Q over the whole (M+N) rows,
// keys/values concatenated with the complete reference (text included),
// giving 2(M+N) rows. Known to leak the reference prompt; kept as the
// baseline the selective variant is measured against.
SharedQkv naive_share(const QkvBundle& tar, const QkvBundle& ref);

// Image-only sharing: reference text K/V never enter the output.
//   Qf = [Q_txt ; AdaIN(Q_img, Qr_img)]                      (M+N rows)
//   Kf = [K_txt ; AdaIN(K_img, Kr_img) ; lambda * Kr_img]    (M+2N rows)
//   Vf = [V_txt ; V_img ; Vr_img]                            (M+2N rows)
SharedQkv selective_share(const QkvBundle& tar, const QkvBundle& ref, float lambda);

Matrix scale_ref_keys(const Matrix& k_ref_img, float lambda);

AttnKind layer_policy(uint32_t layer, const SharingConfig& cfg);

// Position tables for an assembled attention call: the target owns the
// native grid, the reference carries shifted (or colliding) coordinates.
struct AttentionPositions {
    PositionTable target;    // text + image, identity
    PositionTable reference; // text + image, shifted per config
    RopeParams rope;
};

AttentionPositions make_attention_positions(Grid grid, uint32_t text_len, ShiftMode shift,
                                            const RopeParams& rope);

struct AttentionDiag {
    Matrix weights; // (M+N) x key-count, post softmax
    Matrix logits;  // (M+N) x key-count, pre softmax (already 1/sqrt(d_k) scaled)
};

// Assembles Q/K/V per cfg.mode, applies rotary embedding with the reference
// image keys on their (possibly shifted) coordinates, then runs
// softmax(Q Kt / sqrt(d_k)) V. ref may be null in vanilla mode.
Matrix shared_mm_attention(const QkvBundle& tar, const QkvBundle* ref, const SharingConfig& cfg,
                           const AttentionPositions& positions, AttentionDiag* diag = nullptr);

} // namespace sattn
