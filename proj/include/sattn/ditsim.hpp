#pragma once

#include "sattn/sharing.hpp"

#include <functional>
#include <map>
#include <optional>

namespace sattn {

// Desk-scale MM-DiT dimensions. Defaults mirror the reference setup at toy
// size: eight layers split into three groups for layer ablations.
struct ModelConfig {
    uint32_t layers = 8;
    uint32_t heads = 4;
    uint32_t model_dim = 64;
    uint32_t text_len = 4;
    Grid grid{8, 8};
    uint64_t seed = 0;

    uint32_t head_dim() const { return model_dim / heads; }
    uint32_t image_tokens() const { return grid.tokens(); }
    void validate() const;
};

// One transformer layer: six Q/K/V projections (text and image streams kept
// separate) plus per-stream output projections. All model_dim wide; heads
// are column slices of width head_dim.
struct LayerWeights {
    Matrix wq_img, wk_img, wv_img;
    Matrix wq_txt, wk_txt, wv_txt;
    Matrix wo_img, wo_txt;
};

struct ToyDit {
    ModelConfig cfg;
    std::vector<LayerWeights> layers;
    Matrix w_velocity; // d x d linear head over final image tokens
};

ToyDit init_model(const ModelConfig& cfg);

struct TokenState {
    Matrix txt; // M x d
    Matrix img; // N x d
};

// (sampler step key, layer) -> full-width reference bundle.
struct StepLayerKey {
    uint32_t t = 0;
    uint32_t layer = 0;
    auto operator<=>(const StepLayerKey&) const = default;
};

using RefBundleStore = std::map<StepLayerKey, QkvBundle>;

// Layer bundles for a single timestep, keyed by layer only.
using LayerBundleMap = std::map<uint32_t, QkvBundle>;

struct AttnProbe {
    uint32_t layer = 0;
    bool captured = false;
    Matrix weights; // (M+N) x key-count, mean over heads
};

struct ForwardResult {
    TokenState tokens;
    std::vector<QkvBundle> layer_qkv;  // raw target projections, one per layer
    std::vector<AttnKind> layer_kinds; // which policy each layer took
};

// One pass through the stack. ref supplies full-width bundles for every
// layer the policy shares; missing entries are a configuration error.
ForwardResult forward(const ToyDit& model, const TokenState& input, double t,
                      const SharingConfig& sharing, const AttentionPositions& positions,
                      const LayerBundleMap* ref = nullptr, AttnProbe* probe = nullptr);

Matrix cfg_combine(const Matrix& v_uncond, const Matrix& v_cond, float s);

// Linear velocity head over the (normalized) final image tokens.
Matrix predict_velocity(const ToyDit& model, const TokenState& tokens);

struct SamplerConfig {
    uint32_t steps = 30;
    float cfg_scale = 3.5f;
};

struct Trajectory {
    std::vector<Matrix> states; // steps+1 entries, from t=1 noise to t=0
    const Matrix& final_state() const { return states.back(); }
};

using VelocityFn = std::function<Matrix(const Matrix& x, double t)>;

// Euler integration of x' = -v on the uniform grid from t=1 down to t=0.
Trajectory rf_sample(const VelocityFn& velocity, const SamplerConfig& sampler,
                     const Matrix& x_init);

// Seed derivation: one master seed fans out to fixed pcg32 streams.
SeededRng weights_rng(uint64_t seed);
SeededRng prompt_rng(uint64_t seed, uint32_t stream_idx);
SeededRng noise_rng(uint64_t seed, uint32_t stream_idx);

Matrix make_prompt_embedding(const ModelConfig& cfg, uint64_t run_seed, uint32_t stream_idx);
Matrix draw_noise_latent(const ModelConfig& cfg, uint64_t run_seed, uint32_t stream_idx);
Matrix timestep_embedding(double t, uint32_t dim);

// Reference-target generation: stream 0 samples with vanilla attention and
// records its per-(step,layer) bundles; target streams consume them (or an
// external store) under the sharing config. Per-step keys run T..1 so that
// key k matches an interpolation cache built with the same step count.
struct GeneratedStream {
    Trajectory trajectory;
};

struct GenerateSetResult {
    GeneratedStream reference;
    std::vector<GeneratedStream> targets;
    RefBundleStore reference_bundles; // recorded when no external store given
    std::optional<AttnProbe> probe;   // target 1, last step, first shared layer
    uint32_t probe_step_key = 0;
};

GenerateSetResult generate_set(const ToyDit& model, const SamplerConfig& sampler,
                               const SharingConfig& sharing, uint32_t n_targets,
                               uint64_t run_seed, const RefBundleStore* external_ref = nullptr);

} // namespace sattn
