#include "sattn/ditsim.hpp"

#include <cmath>

namespace sattn {

void ModelConfig::validate() const {
    if (layers < 1 || heads < 1 || model_dim < 1 || text_len < 1 || grid.h < 1 || grid.w < 1) {
        throw ValidationError("model config: all counts must be >= 1");
    }
    if (model_dim % heads != 0) {
        throw ValidationError("model config: model_dim must be divisible by heads");
    }
    uint32_t d_k = model_dim / heads;
    if (d_k % 4 != 0) {
        throw ValidationError("model config: head_dim must be a multiple of 4 for 2D rope");
    }
}

ToyDit init_model(const ModelConfig& cfg) {
    cfg.validate();
    ToyDit model;
    model.cfg = cfg;
    SeededRng rng = weights_rng(cfg.seed);
    const float ws = 1.0f / std::sqrt(float(cfg.model_dim));
    auto draw = [&](Matrix& m) {
        m = Matrix(cfg.model_dim, cfg.model_dim);
        fill_gaussian(m, rng, ws);
    };
    model.layers.resize(cfg.layers);
    for (LayerWeights& lw : model.layers) {
        draw(lw.wq_img);
        draw(lw.wk_img);
        draw(lw.wv_img);
        draw(lw.wq_txt);
        draw(lw.wk_txt);
        draw(lw.wv_txt);
        draw(lw.wo_img);
        draw(lw.wo_txt);
    }
    draw(model.w_velocity);
    return model;
}

Matrix timestep_embedding(double t, uint32_t dim) {
    // sinusoidal over t*1000 so the toy range [0,1] spans useful phases
    Matrix e(1, dim);
    const double ts = t * 1000.0;
    const uint32_t half = dim / 2;
    for (uint32_t i = 0; i < half; ++i) {
        double freq = std::pow(10000.0, -double(i) / double(half));
        e(0, 2 * i) = float(std::sin(ts * freq));
        e(0, 2 * i + 1) = float(std::cos(ts * freq));
    }
    if (dim % 2) e(0, dim - 1) = 0.0f;
    return e;
}

namespace {

Matrix add_row_broadcast(const Matrix& m, const Matrix& row) {
    Matrix out = m;
    for (uint32_t r = 0; r < m.rows; ++r) {
        for (uint32_t c = 0; c < m.cols; ++c) {
            out(r, c) += row(0, c);
        }
    }
    return out;
}

// Pre-norm without a learned gain: keeps attention logits unit-scale at any
// depth while the residual stream itself stays raw.
Matrix rms_norm(const Matrix& m) {
    Matrix out(m.rows, m.cols);
    for (uint32_t r = 0; r < m.rows; ++r) {
        double sq = 0.0;
        for (uint32_t c = 0; c < m.cols; ++c) sq += double(m(r, c)) * m(r, c);
        const double inv = 1.0 / std::sqrt(sq / m.cols + 1e-6);
        for (uint32_t c = 0; c < m.cols; ++c) out(r, c) = float(m(r, c) * inv);
    }
    return out;
}

QkvBundle slice_head(const QkvBundle& full, uint32_t head, uint32_t d_k) {
    const uint32_t b = head * d_k;
    const uint32_t e = b + d_k;
    QkvBundle out;
    out.q_txt = slice_cols(full.q_txt, b, e);
    out.k_txt = slice_cols(full.k_txt, b, e);
    out.v_txt = slice_cols(full.v_txt, b, e);
    out.q_img = slice_cols(full.q_img, b, e);
    out.k_img = slice_cols(full.k_img, b, e);
    out.v_img = slice_cols(full.v_img, b, e);
    return out;
}

} // namespace

ForwardResult forward(const ToyDit& model, const TokenState& input, double t,
                      const SharingConfig& sharing, const AttentionPositions& positions,
                      const LayerBundleMap* ref, AttnProbe* probe) {
    const ModelConfig& cfg = model.cfg;
    const uint32_t m = cfg.text_len;
    const uint32_t n = cfg.image_tokens();
    const uint32_t d_k = cfg.head_dim();
    if (input.txt.rows != m || input.txt.cols != cfg.model_dim || input.img.rows != n ||
        input.img.cols != cfg.model_dim) {
        throw ShapeError("forward: token dims do not match model config");
    }

    Matrix temb = timestep_embedding(t, cfg.model_dim);
    Matrix x_txt = add_row_broadcast(input.txt, temb);
    Matrix x_img = add_row_broadcast(input.img, temb);

    ForwardResult result;
    result.layer_qkv.reserve(cfg.layers);
    result.layer_kinds.reserve(cfg.layers);

    for (uint32_t l = 0; l < cfg.layers; ++l) {
        const LayerWeights& lw = model.layers[l];
        const Matrix n_txt = rms_norm(x_txt);
        const Matrix n_img = rms_norm(x_img);
        QkvBundle full;
        full.q_txt = matmul(n_txt, lw.wq_txt);
        full.k_txt = matmul(n_txt, lw.wk_txt);
        full.v_txt = matmul(n_txt, lw.wv_txt);
        full.q_img = matmul(n_img, lw.wq_img);
        full.k_img = matmul(n_img, lw.wk_img);
        full.v_img = matmul(n_img, lw.wv_img);

        const AttnKind kind = layer_policy(l, sharing);
        result.layer_kinds.push_back(kind);

        const QkvBundle* ref_full = nullptr;
        if (kind == AttnKind::shared) {
            if (ref == nullptr || !ref->count(l)) {
                throw ConfigError("forward: layer " + std::to_string(l) +
                                  " shares but no reference bundle is present");
            }
            ref_full = &ref->at(l);
        }

        SharingConfig layer_cfg = sharing;
        if (kind == AttnKind::vanilla) layer_cfg.mode = SharingMode::vanilla;

        Matrix attn_out(m + n, cfg.model_dim);
        Matrix probe_sum;
        const bool want_probe = probe && !probe->captured && probe->layer == l;
        for (uint32_t h = 0; h < cfg.heads; ++h) {
            QkvBundle tar_h = slice_head(full, h, d_k);
            QkvBundle ref_h;
            if (ref_full) ref_h = slice_head(*ref_full, h, d_k);
            AttentionDiag diag;
            Matrix out_h = shared_mm_attention(tar_h, ref_full ? &ref_h : nullptr, layer_cfg,
                                               positions, want_probe ? &diag : nullptr);
            for (uint32_t r = 0; r < out_h.rows; ++r) {
                for (uint32_t c = 0; c < d_k; ++c) {
                    attn_out(r, h * d_k + c) = out_h(r, c);
                }
            }
            if (want_probe) {
                if (h == 0) {
                    probe_sum = diag.weights;
                } else {
                    probe_sum = sattn::add(probe_sum, diag.weights);
                }
            }
        }
        if (want_probe) {
            probe->weights = scale(probe_sum, 1.0f / float(cfg.heads));
            probe->captured = true;
        }

        Matrix attn_txt = slice_rows(attn_out, 0, m);
        Matrix attn_img = slice_rows(attn_out, m, m + n);
        x_txt = sattn::add(x_txt, matmul(attn_txt, lw.wo_txt));
        x_img = sattn::add(x_img, matmul(attn_img, lw.wo_img));

        result.layer_qkv.push_back(std::move(full));
    }

    result.tokens.txt = std::move(x_txt);
    result.tokens.img = std::move(x_img);
    return result;
}

Matrix predict_velocity(const ToyDit& model, const TokenState& tokens) {
    return matmul(rms_norm(tokens.img), model.w_velocity);
}

Matrix cfg_combine(const Matrix& v_uncond, const Matrix& v_cond, float s) {
    if (!v_uncond.same_shape(v_cond)) {
        throw ShapeError("cfg_combine: shape mismatch");
    }
    Matrix out(v_uncond.rows, v_uncond.cols);
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = v_uncond.data[i] + s * (v_cond.data[i] - v_uncond.data[i]);
    }
    return out;
}

Trajectory rf_sample(const VelocityFn& velocity, const SamplerConfig& sampler,
                     const Matrix& x_init) {
    if (sampler.steps < 1) {
        throw ValidationError("sampler: steps must be >= 1");
    }
    Trajectory traj;
    traj.states.reserve(sampler.steps + 1);
    traj.states.push_back(x_init);
    const double dt = 1.0 / sampler.steps;
    Matrix x = x_init;
    for (uint32_t k = 0; k < sampler.steps; ++k) {
        const double t = 1.0 - double(k) * dt;
        Matrix v = velocity(x, t);
        if (!v.same_shape(x)) {
            throw ShapeError("sampler: velocity shape mismatch");
        }
        for (size_t i = 0; i < x.data.size(); ++i) {
            x.data[i] = float(double(x.data[i]) - dt * double(v.data[i]));
        }
        traj.states.push_back(x);
    }
    return traj;
}

SeededRng weights_rng(uint64_t seed) { return SeededRng(seed, 0); }
SeededRng prompt_rng(uint64_t seed, uint32_t stream_idx) { return SeededRng(seed, 100 + stream_idx); }
SeededRng noise_rng(uint64_t seed, uint32_t stream_idx) { return SeededRng(seed, 200 + stream_idx); }

Matrix make_prompt_embedding(const ModelConfig& cfg, uint64_t run_seed, uint32_t stream_idx) {
    Matrix c(cfg.text_len, cfg.model_dim);
    SeededRng rng = prompt_rng(run_seed, stream_idx);
    fill_gaussian(c, rng);
    return c;
}

Matrix draw_noise_latent(const ModelConfig& cfg, uint64_t run_seed, uint32_t stream_idx) {
    Matrix x(cfg.image_tokens(), cfg.model_dim);
    SeededRng rng = noise_rng(run_seed, stream_idx);
    fill_gaussian(x, rng);
    return x;
}

namespace {

// Model-backed velocity for one stream. Sharing bundles, when recording or
// consuming, come from the conditional pass; the same bundles serve both
// guidance passes of the targets.
struct StreamSampler {
    const ToyDit& model;
    const SamplerConfig& sampler;
    SharingConfig sharing;
    AttentionPositions positions;
    Matrix prompt;
    Matrix uncond;

    StreamSampler(const ToyDit& m, const SamplerConfig& s, SharingConfig cfg,
                  AttentionPositions pos, Matrix p, Matrix u)
        : model(m), sampler(s), sharing(std::move(cfg)), positions(std::move(pos)),
          prompt(std::move(p)), uncond(std::move(u)) {}

    const RefBundleStore* ref_store = nullptr; // null -> vanilla stream
    RefBundleStore* record_into = nullptr;
    std::set<uint32_t> record_layers;

    AttnProbe* probe = nullptr;
    uint32_t probe_step_key = 0;

    Matrix operator()(const Matrix& x, double t) const {
        const uint32_t step_key = uint32_t(std::lround(t * sampler.steps));
        LayerBundleMap layer_ref;
        if (ref_store) {
            for (uint32_t l : sharing.layer_set) {
                auto it = ref_store->find({step_key, l});
                if (it == ref_store->end()) {
                    throw ConfigError("reference store lacks bundle for step " +
                                      std::to_string(step_key) + " layer " + std::to_string(l));
                }
                layer_ref.emplace(l, it->second);
            }
        }
        const LayerBundleMap* ref = ref_store ? &layer_ref : nullptr;

        AttnProbe* pass_probe =
            (probe && step_key == probe_step_key && !probe->captured) ? probe : nullptr;
        ForwardResult cond =
            forward(model, {prompt, x}, t, sharing, positions, ref, pass_probe);
        if (record_into) {
            for (uint32_t l : record_layers) {
                record_into->emplace(StepLayerKey{step_key, l}, cond.layer_qkv[l]);
            }
        }
        ForwardResult un = forward(model, {uncond, x}, t, sharing, positions, ref, nullptr);

        Matrix v_cond = predict_velocity(model, cond.tokens);
        Matrix v_un = predict_velocity(model, un.tokens);
        return cfg_combine(v_un, v_cond, sampler.cfg_scale);
    }
};

} // namespace

GenerateSetResult generate_set(const ToyDit& model, const SamplerConfig& sampler,
                               const SharingConfig& sharing, uint32_t n_targets,
                               uint64_t run_seed, const RefBundleStore* external_ref) {
    const ModelConfig& cfg = model.cfg;
    sharing.validate(cfg.layers);
    if (sampler.steps < 1) {
        throw ValidationError("sampler: steps must be >= 1");
    }
    if (sampler.cfg_scale < 0.0f) {
        throw ValidationError("sampler: cfg_scale must be >= 0");
    }

    const RopeParams rope = RopeParams::even_split(cfg.head_dim());
    const AttentionPositions positions =
        make_attention_positions(cfg.grid, cfg.text_len, sharing.shift, rope);
    const Matrix uncond(cfg.text_len, cfg.model_dim);
    const bool shares = sharing.mode != SharingMode::vanilla && !sharing.layer_set.empty();

    GenerateSetResult result;

    if (external_ref == nullptr) {
        // Reference stream: vanilla attention, bundles recorded for the targets.
        SharingConfig ref_cfg = sharing;
        ref_cfg.mode = SharingMode::vanilla;
        StreamSampler ref_sampler{model, sampler, ref_cfg, positions,
                                  make_prompt_embedding(cfg, run_seed, 0), uncond};
        if (shares) {
            ref_sampler.record_into = &result.reference_bundles;
            ref_sampler.record_layers = sharing.layer_set;
        }
        Matrix x0 = draw_noise_latent(cfg, run_seed, 0);
        result.reference.trajectory =
            rf_sample([&](const Matrix& x, double t) { return ref_sampler(x, t); }, sampler, x0);
    }
    const RefBundleStore* store = external_ref ? external_ref : &result.reference_bundles;

    AttnProbe probe;
    if (shares) {
        probe.layer = *sharing.layer_set.begin();
        result.probe_step_key = 1; // last velocity evaluation before t=0
    }

    result.targets.resize(n_targets);
    for (uint32_t k = 0; k < n_targets; ++k) {
        StreamSampler tgt{model, sampler, sharing, positions,
                          make_prompt_embedding(cfg, run_seed, k + 1), uncond};
        if (shares) {
            tgt.ref_store = store;
            if (k == 0) {
                tgt.probe = &probe;
                tgt.probe_step_key = result.probe_step_key;
            }
        }
        Matrix xk = draw_noise_latent(cfg, run_seed, k + 1);
        result.targets[k].trajectory =
            rf_sample([&](const Matrix& x, double t) { return tgt(x, t); }, sampler, xk);
    }
    if (shares && probe.captured) {
        result.probe = std::move(probe);
    }
    return result;
}

} // namespace sattn
