#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sattn/ditsim.hpp"

#include <cmath>
#include <cstring>

using namespace sattn;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.layers = 4;
    cfg.heads = 2;
    cfg.model_dim = 16;
    cfg.text_len = 2;
    cfg.grid = {2, 2};
    cfg.seed = 11;
    return cfg;
}

AttentionPositions positions_for(const ModelConfig& cfg, ShiftMode shift) {
    return make_attention_positions(cfg.grid, cfg.text_len, shift,
                                    RopeParams::even_split(cfg.head_dim()));
}

TokenState random_tokens(const ModelConfig& cfg, uint64_t seed) {
    TokenState s;
    s.txt = Matrix(cfg.text_len, cfg.model_dim);
    s.img = Matrix(cfg.image_tokens(), cfg.model_dim);
    SeededRng rng(seed, 42);
    fill_gaussian(s.txt, rng);
    fill_gaussian(s.img, rng);
    return s;
}

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows == b.rows && a.cols == b.cols &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * 4) == 0;
}

} // namespace

TEST_CASE("init_model is deterministic in the seed") {
    ModelConfig cfg = tiny_config();
    ToyDit a = init_model(cfg);
    ToyDit b = init_model(cfg);
    REQUIRE(a.layers.size() == 4);
    for (size_t l = 0; l < a.layers.size(); ++l) {
        CHECK(same_bits(a.layers[l].wq_img, b.layers[l].wq_img));
        CHECK(same_bits(a.layers[l].wo_txt, b.layers[l].wo_txt));
    }
    CHECK(same_bits(a.w_velocity, b.w_velocity));

    cfg.seed = 12;
    ToyDit c = init_model(cfg);
    CHECK(!same_bits(a.layers[0].wq_img, c.layers[0].wq_img));
}

TEST_CASE("each layer carries the six projections plus output maps") {
    ModelConfig cfg = tiny_config();
    ToyDit model = init_model(cfg);
    for (const LayerWeights& lw : model.layers) {
        for (const Matrix* m : {&lw.wq_img, &lw.wk_img, &lw.wv_img, &lw.wq_txt, &lw.wk_txt,
                                &lw.wv_txt}) {
            CHECK(m->rows == cfg.model_dim);
            CHECK(m->cols == cfg.heads * cfg.head_dim());
            CHECK(m->all_finite());
        }
        CHECK(lw.wo_img.rows == cfg.model_dim);
        CHECK(lw.wo_txt.cols == cfg.model_dim);
    }
}

TEST_CASE("desk-scale defaults") {
    ModelConfig def;
    CHECK(def.layers == 8);
    CHECK(def.heads == 4);
    CHECK(def.model_dim == 64);
    CHECK(def.head_dim() == 16);
    CHECK(def.text_len == 4);
    CHECK(def.image_tokens() == 64);
}

TEST_CASE("model config validation") {
    ModelConfig cfg = tiny_config();
    cfg.heads = 3; // 16 % 3 != 0
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = tiny_config();
    cfg.text_len = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("vanilla forward is independent of reference bundles") {
    ModelConfig cfg = tiny_config();
    ToyDit model = init_model(cfg);
    TokenState tokens = random_tokens(cfg, 1);
    SharingConfig vanilla;
    vanilla.mode = SharingMode::vanilla;
    AttentionPositions pos = positions_for(cfg, ShiftMode::identity());

    ForwardResult a = forward(model, tokens, 0.5, vanilla, pos, nullptr);

    // sentinel bundles: NaN everywhere; must not be touched
    LayerBundleMap poisoned;
    QkvBundle bad;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    auto fill_nan = [&](Matrix& m, uint32_t r, uint32_t c) {
        m = Matrix(r, c);
        for (float& v : m.data) v = nan;
    };
    fill_nan(bad.q_txt, cfg.text_len, cfg.model_dim);
    fill_nan(bad.k_txt, cfg.text_len, cfg.model_dim);
    fill_nan(bad.v_txt, cfg.text_len, cfg.model_dim);
    fill_nan(bad.q_img, cfg.image_tokens(), cfg.model_dim);
    fill_nan(bad.k_img, cfg.image_tokens(), cfg.model_dim);
    fill_nan(bad.v_img, cfg.image_tokens(), cfg.model_dim);
    for (uint32_t l = 0; l < cfg.layers; ++l) poisoned.emplace(l, bad);

    ForwardResult b = forward(model, tokens, 0.5, vanilla, pos, &poisoned);
    CHECK(same_bits(a.tokens.txt, b.tokens.txt));
    CHECK(same_bits(a.tokens.img, b.tokens.img));
    for (AttnKind k : a.layer_kinds) CHECK(k == AttnKind::vanilla);
}

TEST_CASE("layer policy drives which layers share") {
    ModelConfig cfg = tiny_config();
    ToyDit model = init_model(cfg);
    TokenState tokens = random_tokens(cfg, 2);
    SharingConfig sharing;
    sharing.mode = SharingMode::selective;
    sharing.layer_set = {2, 3};
    AttentionPositions pos = positions_for(cfg, ShiftMode::shift_by(0));

    // reference bundles from a vanilla pass of the same tokens
    SharingConfig vanilla;
    vanilla.mode = SharingMode::vanilla;
    ForwardResult ref = forward(model, tokens, 0.5, vanilla, pos, nullptr);
    LayerBundleMap store;
    for (uint32_t l = 0; l < cfg.layers; ++l) store.emplace(l, ref.layer_qkv[l]);

    ForwardResult shared = forward(model, tokens, 0.5, sharing, pos, &store);
    CHECK(shared.layer_kinds[0] == AttnKind::vanilla);
    CHECK(shared.layer_kinds[1] == AttnKind::vanilla);
    CHECK(shared.layer_kinds[2] == AttnKind::shared);
    CHECK(shared.layer_kinds[3] == AttnKind::shared);

    CHECK(shared.tokens.txt.rows + shared.tokens.img.rows == cfg.text_len + cfg.image_tokens());
    CHECK(shared.tokens.img.cols == cfg.model_dim);
    CHECK(shared.tokens.txt.all_finite());
    CHECK(shared.tokens.img.all_finite());

    // missing bundle for a shared layer
    LayerBundleMap partial;
    partial.emplace(2u, ref.layer_qkv[2]);
    CHECK_THROWS_AS(forward(model, tokens, 0.5, sharing, pos, &partial), ConfigError);
}

TEST_CASE("all-layer self-sharing in the collision regime stays finite and normalized") {
    ModelConfig cfg = tiny_config();
    ToyDit model = init_model(cfg);
    TokenState tokens = random_tokens(cfg, 3);
    AttentionPositions pos = positions_for(cfg, ShiftMode::identity());
    SharingConfig vanilla;
    vanilla.mode = SharingMode::vanilla;
    ForwardResult base = forward(model, tokens, 0.3, vanilla, pos, nullptr);
    LayerBundleMap store;
    for (uint32_t l = 0; l < cfg.layers; ++l) store.emplace(l, base.layer_qkv[l]);

    SharingConfig sharing;
    sharing.mode = SharingMode::naive;
    sharing.shift = ShiftMode::identity();
    for (uint32_t l = 0; l < cfg.layers; ++l) sharing.layer_set.insert(l);

    for (uint32_t l = 0; l < cfg.layers; ++l) {
        AttnProbe probe;
        probe.layer = l;
        ForwardResult out = forward(model, tokens, 0.3, sharing, pos, &store, &probe);
        CHECK(out.tokens.txt.all_finite());
        CHECK(out.tokens.img.all_finite());
        REQUIRE(probe.captured);
        CHECK(probe.weights.cols == 2 * (cfg.text_len + cfg.image_tokens()));
        for (uint32_t r = 0; r < probe.weights.rows; ++r) {
            double sum = 0.0;
            for (float v : probe.weights.row(r)) sum += v;
            CHECK(std::abs(sum - 1.0) <= 1e-6);
        }
    }
}

TEST_CASE("cfg_combine endpoints and default scale") {
    Matrix u(2, 2, {1, 2, 3, 4});
    Matrix c(2, 2, {5, 6, 7, 8});
    Matrix at1 = cfg_combine(u, c, 1.0f);
    for (size_t i = 0; i < 4; ++i) CHECK(at1.data[i] == c.data[i]);
    Matrix at0 = cfg_combine(u, c, 0.0f);
    for (size_t i = 0; i < 4; ++i) CHECK(at0.data[i] == u.data[i]);
    Matrix mid = cfg_combine(u, c, 3.5f);
    CHECK(mid(0, 0) == doctest::Approx(1.0 + 3.5 * 4.0));
    CHECK_THROWS_AS(cfg_combine(u, Matrix(1, 2), 1.0f), ShapeError);

    SamplerConfig def;
    CHECK(def.steps == 30);
    CHECK(def.cfg_scale == 3.5f);
}

TEST_CASE("rf_sample recovers the straight-line flow for any step count") {
    SeededRng rng(55, 0);
    Matrix target(3, 5), noise(3, 5);
    fill_gaussian(target, rng);
    fill_gaussian(noise, rng);
    Matrix v = sub(noise, target);
    for (uint32_t steps : {1u, 2u, 5u, 30u}) {
        SamplerConfig sc;
        sc.steps = steps;
        Trajectory traj = rf_sample([&](const Matrix&, double) { return v; }, sc, noise);
        REQUIRE(traj.states.size() == steps + 1);
        for (size_t i = 0; i < target.data.size(); ++i) {
            CHECK(std::abs(traj.final_state().data[i] - target.data[i]) <= 1e-4);
        }
    }
    SamplerConfig bad;
    bad.steps = 0;
    CHECK_THROWS_AS(rf_sample([&](const Matrix&, double) { return v; }, bad, noise),
                    ValidationError);
}

TEST_CASE("generate_set is deterministic end to end") {
    ModelConfig cfg = tiny_config();
    ToyDit model = init_model(cfg);
    SamplerConfig sampler;
    sampler.steps = 3;
    SharingConfig sharing;
    sharing.mode = SharingMode::selective;
    sharing.layer_set = {2, 3};

    GenerateSetResult a = generate_set(model, sampler, sharing, 2, 7);
    GenerateSetResult b = generate_set(model, sampler, sharing, 2, 7);
    REQUIRE(a.targets.size() == 2);
    for (size_t s = 0; s < a.reference.trajectory.states.size(); ++s) {
        CHECK(same_bits(a.reference.trajectory.states[s], b.reference.trajectory.states[s]));
    }
    for (size_t k = 0; k < 2; ++k) {
        REQUIRE(a.targets[k].trajectory.states.size() == 4);
        for (size_t s = 0; s < 4; ++s) {
            CHECK(same_bits(a.targets[k].trajectory.states[s], b.targets[k].trajectory.states[s]));
        }
    }
    REQUIRE(a.probe.has_value());
    CHECK(a.probe->layer == 2);
    CHECK(same_bits(a.probe->weights, b.probe->weights));

    // different run seed moves the trajectories
    GenerateSetResult c = generate_set(model, sampler, sharing, 2, 8);
    CHECK(!same_bits(a.reference.trajectory.final_state(),
                     c.reference.trajectory.final_state()));
}

TEST_CASE("sharing off equals a reference-free vanilla run") {
    ModelConfig cfg = tiny_config();
    ToyDit model = init_model(cfg);
    SamplerConfig sampler;
    sampler.steps = 2;
    SharingConfig vanilla;
    vanilla.mode = SharingMode::vanilla;

    GenerateSetResult a = generate_set(model, sampler, vanilla, 1, 9);
    // same seed, sharing on: reference stream must be unchanged
    SharingConfig sharing;
    sharing.mode = SharingMode::selective;
    sharing.layer_set = {2, 3};
    GenerateSetResult b = generate_set(model, sampler, sharing, 1, 9);
    for (size_t s = 0; s < a.reference.trajectory.states.size(); ++s) {
        CHECK(same_bits(a.reference.trajectory.states[s], b.reference.trajectory.states[s]));
    }
    // target differs once sharing is active
    CHECK(!same_bits(a.targets[0].trajectory.final_state(),
                     b.targets[0].trajectory.final_state()));
    CHECK(!a.probe.has_value());
    CHECK(b.probe.has_value());
}

TEST_CASE("timestep embedding varies with t and has the model width") {
    Matrix e1 = timestep_embedding(0.1, 16);
    Matrix e2 = timestep_embedding(0.9, 16);
    CHECK(e1.cols == 16);
    bool differs = false;
    for (uint32_t c = 0; c < 16; ++c) differs = differs || e1(0, c) != e2(0, c);
    CHECK(differs);
}
