#include "checks/criteria.hpp"
#include "checks/oracle.hpp"

#include "sattn/cli.hpp"
#include "sattn/tensor_io.hpp"

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace sattn::checks {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* format, ...) {
    char buf[512];
    va_list args;
    va_start(args, format);
    std::vsnprintf(buf, sizeof(buf), format, args);
    va_end(args);
    return buf;
}

CheckResult make_result(int id, const char* name) {
    CheckResult r;
    r.id = id;
    r.name = name;
    return r;
}

Matrix random_matrix(uint32_t rows, uint32_t cols, SeededRng& rng) {
    Matrix m(rows, cols);
    fill_gaussian(m, rng);
    return m;
}

QkvBundle random_bundle(uint32_t m, uint32_t n, uint32_t d_k, SeededRng& rng) {
    QkvBundle b;
    b.q_txt = random_matrix(m, d_k, rng);
    b.k_txt = random_matrix(m, d_k, rng);
    b.v_txt = random_matrix(m, d_k, rng);
    b.q_img = random_matrix(n, d_k, rng);
    b.k_img = random_matrix(n, d_k, rng);
    b.v_img = random_matrix(n, d_k, rng);
    return b;
}

fs::path temp_dir(const std::string& tag) {
    static int counter = 0;
    fs::path p = fs::temp_directory_path() /
                 ("sattn-check-" + tag + "-" + std::to_string(++counter));
    fs::remove_all(p);
    return p;
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

// ---- criterion 1: share shape contracts -------------------------------

CheckResult check_shapes() {
    CheckResult r = make_result(1, "share-shape-contracts");
    const auto t0 = Clock::now();
    SeededRng rng(11, 1);
    for (int c = 0; c < 50; ++c) {
        const uint32_t m = 1 + rng.next_u32() % 12;
        const uint32_t n = 1 + rng.next_u32() % 12;
        const uint32_t d_k = 4 * (1 + rng.next_u32() % 4);
        QkvBundle tar = random_bundle(m, n, d_k, rng);
        QkvBundle ref = random_bundle(m, n, d_k, rng);
        SharedQkv nv = naive_share(tar, ref);
        SharedQkv sel = selective_share(tar, ref, 1.1f);
        if (nv.q.rows != m + n || nv.k.rows != 2 * (m + n) || nv.v.rows != 2 * (m + n) ||
            sel.q.rows != m + n || sel.k.rows != m + 2 * n || sel.v.rows != m + 2 * n) {
            r.detail = fmt("row contract broken at M=%u N=%u", m, n);
            return r;
        }
    }
    const double dt = seconds_since(t0);
    r.pass = dt < 1.0;
    r.detail = fmt("50 random (M,N,d_k) triples, %.3fs", dt);
    return r;
}

// ---- criterion 2: AdaIN statistics ------------------------------------

CheckResult check_adain() {
    CheckResult r = make_result(2, "adain-statistics");
    SeededRng rng(12, 1);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
        const uint32_t rows_x = 3 + rng.next_u32() % 8;
        const uint32_t rows_y = 3 + rng.next_u32() % 8;
        const uint32_t cols = 2 + rng.next_u32() % 7;
        Matrix x = random_matrix(rows_x, cols, rng);
        Matrix y = random_matrix(rows_y, cols, rng);
        Matrix z = adain(x, y);
        ChannelStats sz = channel_stats(z);
        ChannelStats sy = channel_stats(y);
        for (uint32_t i = 0; i < cols; ++i) {
            worst = std::max(worst, std::abs(double(sz.mean[i]) - sy.mean[i]));
            worst = std::max(worst, std::abs(double(sz.stddev[i]) - sy.stddev[i]));
        }
        Matrix id = adain(x, x);
        for (size_t i = 0; i < id.data.size(); ++i) {
            worst = std::max(worst, std::abs(double(id.data[i]) - x.data[i]));
        }
    }
    r.pass = worst <= 1e-5;
    r.detail = fmt("100 pairs, worst stat/identity deviation %.3g (tol 1e-5)", worst);
    return r;
}

// ---- criterion 3: attention vs brute-force oracle ----------------------

CheckResult check_attention_oracle() {
    CheckResult r = make_result(3, "attention-oracle-equivalence");
    const auto t0 = Clock::now();
    SeededRng rng(13, 1);
    const std::pair<uint32_t, uint32_t> grids[] = {{1, 1}, {1, 2}, {2, 1}, {2, 2},
                                                   {1, 3}, {3, 1}, {1, 5}};
    double worst = 0.0;
    int cases = 0;
    for (SharingMode mode : {SharingMode::vanilla, SharingMode::naive, SharingMode::selective}) {
        for (bool shifted : {false, true}) {
            for (int c = 0; c < 20; ++c) {
                const auto [h, w] = grids[rng.next_u32() % 7];
                const uint32_t n = h * w;
                const uint32_t m = 1 + rng.next_u32() % (12 - 2 * n);
                const uint32_t d_k = (rng.next_u32() % 2) ? 8 : 4;
                const float lambda = 0.5f + rng.next_float();

                QkvBundle tar = random_bundle(m, n, d_k, rng);
                QkvBundle ref = random_bundle(m, n, d_k, rng);

                SharingConfig cfg;
                cfg.mode = mode;
                cfg.lambda = lambda;
                cfg.shift = shifted ? ShiftMode::shift_by(w) : ShiftMode::identity();
                AttentionPositions pos = make_attention_positions(
                    Grid{h, w}, m, cfg.shift, RopeParams::even_split(d_k));
                Matrix got = shared_mm_attention(
                    tar, mode == SharingMode::vanilla ? nullptr : &ref, cfg, pos);

                OracleSetup setup;
                setup.mode = mode;
                setup.lambda = lambda;
                setup.shifted = shifted;
                setup.grid_h = h;
                setup.grid_w = w;
                setup.text_len = m;
                Rows want = oracle_attention(tar, &ref, setup);

                for (uint32_t i = 0; i < got.rows; ++i) {
                    for (uint32_t j = 0; j < got.cols; ++j) {
                        worst = std::max(worst, std::abs(double(got(i, j)) - want[i][j]));
                    }
                }
                ++cases;
            }
        }
    }
    const double dt = seconds_since(t0);
    r.pass = worst <= 1e-5 && dt < 5.0;
    r.detail = fmt("%d cases across mode x shift, worst |diff| %.3g (tol 1e-5), %.3fs",
                   cases, worst, dt);
    return r;
}

// ---- criterion 4: shifted coordinates are disjoint ----------------------

CheckResult check_disjointness() {
    CheckResult r = make_result(4, "shift-disjointness");
    for (uint32_t h = 1; h <= 8; ++h) {
        for (uint32_t w = 1; w <= 8; ++w) {
            auto ident = image_grid_positions({h, w}, ShiftMode::identity());
            auto shifted = image_grid_positions({h, w}, ShiftMode::shift_by(w));
            std::set<std::pair<uint32_t, uint32_t>> seen;
            for (const GridPos& p : ident) seen.insert({p.i, p.j});
            if (seen.size() != size_t(h) * w) {
                r.detail = fmt("identity grid %ux%u does not enumerate uniquely", h, w);
                return r;
            }
            for (const GridPos& p : shifted) {
                if (seen.count({p.i, p.j})) {
                    r.detail = fmt("collision at (%u,%u) for grid %ux%u", p.i, p.j, h, w);
                    return r;
                }
                if (p.j < w) {
                    r.detail = fmt("shifted j=%u below width %u", p.j, w);
                    return r;
                }
            }
        }
    }
    r.pass = true;
    r.detail = "exhaustive for all grids h,w <= 8";
    return r;
}

// ---- criterion 5: positional collision experiment ----------------------

CheckResult check_collision() {
    CheckResult r = make_result(5, "positional-collision");
    const auto t0 = Clock::now();
    CollisionConfig cfg; // defaults: 8x8 grid, d_k 16, 200 trials
    CollisionSummary s = collision_experiment(cfg);
    const double dt = seconds_since(t0);
    const bool direction = s.mean_d0_identity > s.mean_d0_shifted;
    const bool significant = s.sign_test_p < 0.01;
    const bool spread = s.min_spread_mass > 0.0;
    r.pass = direction && significant && spread && dt < 30.0;
    r.detail = fmt("d0 identity %.4f vs shifted %.4f, wins %u/200, p %.3g, "
                   "min spread %.3g, %.2fs",
                   s.mean_d0_identity, s.mean_d0_shifted, s.identity_wins, s.sign_test_p,
                   s.min_spread_mass, dt);
    return r;
}

// ---- criterion 6: key-scaling linearity + monotone constructed case ----

CheckResult check_key_scaling() {
    CheckResult r = make_result(6, "key-scaling-linearity");
    const float lambdas[] = {0.9f, 0.95f, 1.0f, 1.05f, 1.1f, 1.15f};

    SeededRng rng(16, 1);
    const uint32_t m = 2, h = 2, w = 2, n = 4, d_k = 8;
    QkvBundle tar = random_bundle(m, n, d_k, rng);
    QkvBundle ref = random_bundle(m, n, d_k, rng);
    AttentionPositions pos = make_attention_positions(Grid{h, w}, m, ShiftMode::shift_by(w),
                                                      RopeParams::even_split(d_k));
    auto ref_logits = [&](float lambda) {
        SharingConfig cfg;
        cfg.mode = SharingMode::selective;
        cfg.lambda = lambda;
        cfg.shift = ShiftMode::shift_by(w);
        AttentionDiag diag;
        shared_mm_attention(tar, &ref, cfg, pos, &diag);
        return slice_cols(diag.logits, diag.logits.cols - n, diag.logits.cols);
    };
    const Matrix base = ref_logits(1.0f);
    double worst = 0.0;
    for (float lambda : lambdas) {
        Matrix got = ref_logits(lambda);
        for (size_t i = 0; i < got.data.size(); ++i) {
            worst = std::max(worst, std::abs(double(got.data[i]) - double(lambda) * base.data[i]));
        }
    }
    const bool linear = worst <= 1e-4;

    // constructed all-positive-logit case: single image token, positive vectors
    QkvBundle ptar, pref;
    auto ones = [](uint32_t rows, uint32_t cols, float v) {
        Matrix m2(rows, cols);
        for (float& x : m2.data) x = v;
        return m2;
    };
    const uint32_t pd = 4;
    ptar.q_txt = ones(1, pd, 0.5f);
    ptar.k_txt = ones(1, pd, 0.5f);
    ptar.v_txt = ones(1, pd, 0.3f);
    ptar.q_img = ones(1, pd, 1.0f);
    ptar.k_img = ones(1, pd, 1.0f);
    ptar.v_img = ones(1, pd, 0.7f);
    pref = ptar;
    AttentionPositions ppos = make_attention_positions(Grid{1, 1}, 1, ShiftMode::shift_by(1),
                                                       RopeParams::even_split(pd));
    double prev_mass = -1.0;
    bool monotone = true;
    bool positive = true;
    for (float lambda : lambdas) {
        SharingConfig cfg;
        cfg.mode = SharingMode::selective;
        cfg.lambda = lambda;
        cfg.shift = ShiftMode::shift_by(1);
        AttentionDiag diag;
        shared_mm_attention(ptar, &pref, cfg, ppos, &diag);
        for (float v : diag.logits.data) positive = positive && v > 0.0f;
        // attention mass the image query places on the reference key
        const double mass = diag.weights(1, diag.weights.cols - 1);
        monotone = monotone && mass > prev_mass;
        prev_mass = mass;
    }

    r.pass = linear && monotone && positive;
    r.detail = fmt("worst |logit(l)-l*logit(1)| %.3g (tol 1e-4), constructed case %s",
                   worst, monotone && positive ? "monotone" : "NOT monotone");
    return r;
}

// ---- criterion 7: reference text isolation ------------------------------

CheckResult check_text_isolation() {
    CheckResult r = make_result(7, "text-isolation");
    SeededRng rng(17, 1);
    QkvBundle tar = random_bundle(2, 4, 8, rng);
    QkvBundle ref = random_bundle(2, 4, 8, rng);
    const float nan = std::numeric_limits<float>::quiet_NaN();
    ref.k_txt(0, 1) = nan;
    ref.v_txt(1, 2) = nan;

    SharedQkv sel = selective_share(tar, ref, 1.1f);
    const bool clean = sel.q.all_finite() && sel.k.all_finite() && sel.v.all_finite();

    SharedQkv nv = naive_share(tar, ref);
    const bool contaminated = !nv.k.all_finite() && !nv.v.all_finite();

    r.pass = clean && contaminated;
    r.detail = fmt("selective stays finite: %s; naive propagates sentinels: %s",
                   clean ? "yes" : "NO", contaminated ? "yes" : "NO");
    return r;
}

// ---- criterion 8: interpolation endpoints + cache cardinality -----------

CheckResult check_interpolation_cache() {
    CheckResult r = make_result(8, "interpolation-endpoints-cache");
    SeededRng rng(18, 1);
    Matrix latent = random_matrix(4, 8, rng);
    Matrix noise = random_matrix(4, 8, rng);
    const uint32_t T = 6;
    Matrix at_T = interpolate_noisy_latent(latent, noise, T, T);
    Matrix at_0 = interpolate_noisy_latent(latent, noise, 0, T);
    Matrix mid = interpolate_noisy_latent(latent, noise, 3, T);
    for (size_t i = 0; i < latent.data.size(); ++i) {
        if (at_T.data[i] != noise.data[i] || at_0.data[i] != latent.data[i]) {
            r.detail = "endpoint not exact";
            return r;
        }
        const float avg = (noise.data[i] + latent.data[i]) / 2.0f;
        if (mid.data[i] != avg) {
            r.detail = "midpoint is not the elementwise average";
            return r;
        }
    }

    ModelConfig mc;
    mc.layers = 4;
    mc.heads = 2;
    mc.model_dim = 16;
    mc.text_len = 2;
    mc.grid = {2, 2};
    mc.seed = 5;
    ToyDit model = init_model(mc);
    Matrix lat = random_matrix(mc.image_tokens(), mc.model_dim, rng);
    RefFeatureCache cache = cache_reference_features(lat, model, 3, {1, 3}, 9);
    const size_t expect = size_t(3 + 1) * 2;
    r.pass = cache.entry_count() == expect;
    r.detail = fmt("endpoints exact; cache holds %zu bundles (want %zu)",
                   cache.entry_count(), expect);
    return r;
}

// ---- criterion 9: sampler recovers straight-line flow --------------------

CheckResult check_sampler() {
    CheckResult r = make_result(9, "sampler-straight-line");
    SeededRng rng(19, 1);
    Matrix target = random_matrix(4, 6, rng);
    Matrix noise = random_matrix(4, 6, rng);
    Matrix v = sub(noise, target);
    double worst = 0.0;
    for (uint32_t steps : {1u, 5u, 30u}) {
        SamplerConfig sc;
        sc.steps = steps;
        Trajectory traj = rf_sample([&](const Matrix&, double) { return v; }, sc, noise);
        const Matrix& fin = traj.final_state();
        for (size_t i = 0; i < fin.data.size(); ++i) {
            worst = std::max(worst, std::abs(double(fin.data[i]) - target.data[i]));
        }
        if (traj.states.size() != steps + 1) {
            r.detail = "trajectory length wrong";
            return r;
        }
    }
    r.pass = worst <= 1e-4;
    r.detail = fmt("T in {1,5,30}, worst recovery error %.3g (tol 1e-4)", worst);
    return r;
}

// ---- criterion 10: determinism + bit-exact tensor files ------------------

RunConfig small_run_config(const fs::path& out) {
    RunConfig rc;
    rc.model.layers = 4;
    rc.model.heads = 2;
    rc.model.model_dim = 16;
    rc.model.text_len = 2;
    rc.model.grid = {2, 2};
    rc.model.seed = 21;
    rc.sampler.steps = 3;
    rc.sampler.cfg_scale = 3.5f;
    rc.sharing.mode = SharingMode::selective;
    rc.sharing.lambda = 1.1f;
    rc.sharing.layer_set = {2, 3};
    rc.sharing.shift = ShiftMode::shift_by(0);
    rc.targets = 2;
    rc.seed = 77;
    rc.out_dir = out;
    return rc;
}

CheckResult check_determinism() {
    CheckResult r = make_result(10, "determinism-bit-exact");
    const fs::path dir_a = temp_dir("det-a");
    const fs::path dir_b = temp_dir("det-b");
    run_generate(small_run_config(dir_a));
    run_generate(small_run_config(dir_b));

    bool identical = true;
    std::string first_diff;
    size_t files = 0;
    for (const auto& entry : fs::directory_iterator(dir_a)) {
        ++files;
        const fs::path other = dir_b / entry.path().filename();
        if (!fs::exists(other) || read_bytes(entry.path()) != read_bytes(other)) {
            identical = false;
            first_diff = entry.path().filename().string();
            break;
        }
    }

    // tensor format round-trip, bitwise
    SeededRng rng(20, 1);
    Matrix m = random_matrix(5, 7, rng);
    const fs::path f1 = dir_a / "roundtrip1.satn";
    const fs::path f2 = dir_a / "roundtrip2.satn";
    write_matrix(f1, m);
    Matrix back = read_matrix(f1);
    bool bits = back.rows == m.rows && back.cols == m.cols &&
                std::memcmp(back.data.data(), m.data.data(), m.data.size() * 4) == 0;
    write_matrix(f2, back);
    bits = bits && read_bytes(f1) == read_bytes(f2);

    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    r.pass = identical && bits && files > 0;
    r.detail = identical && bits
                   ? fmt("%zu artifacts byte-identical across runs; round-trip bit-exact", files)
                   : fmt("mismatch: %s", first_diff.empty() ? "tensor round-trip" : first_diff.c_str());
    return r;
}

// ---- criterion 11: ablation grid structure -------------------------------

CheckResult check_ablate() {
    CheckResult r = make_result(11, "ablation-grid");
    AblateConfig ac;
    ac.model.layers = 6;
    ac.model.heads = 2;
    ac.model.model_dim = 16;
    ac.model.text_len = 2;
    ac.model.grid = {2, 2};
    ac.model.seed = 3;
    ac.sampler.steps = 2;
    ac.sampler.cfg_scale = 3.5f;
    ac.targets = 2;
    ac.seed = 5;
    const fs::path dir = temp_dir("ablate");
    fs::create_directories(dir);
    ac.out_csv = dir / "ablate.csv";
    run_ablate(ac);

    std::ifstream f(ac.out_csv);
    std::string line;
    std::getline(f, line);
    const bool header_ok = line == "lambda,group1,group2,group3,phi,latent_cosine,d0_mass,mean_l1,ref_mass";
    std::set<std::string> lambdas;
    std::set<std::string> masks;
    int rows = 0;
    bool complete = true;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        ++rows;
        std::stringstream ss(line);
        std::vector<std::string> cells;
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 9) {
            complete = false;
            continue;
        }
        lambdas.insert(cells[0]);
        masks.insert(cells[1] + cells[2] + cells[3]);
        for (size_t i = 5; i < cells.size(); ++i) {
            if (cells[i].empty() || cells[i] == "nan" || cells[i] == "-nan") complete = false;
        }
    }
    fs::remove_all(dir);
    r.pass = header_ok && rows == 18 && lambdas.size() == 6 && masks.size() == 3 && complete;
    r.detail = fmt("%d rows, %zu lambdas x %zu masks, cells %s", rows, lambdas.size(),
                   masks.size(), complete ? "complete" : "INCOMPLETE");
    return r;
}

} // namespace

std::vector<CheckResult> run_acceptance_checks() {
    return {
        check_shapes(),        check_adain(),     check_attention_oracle(),
        check_disjointness(),  check_collision(), check_key_scaling(),
        check_text_isolation(),check_interpolation_cache(), check_sampler(),
        check_determinism(),   check_ablate(),
    };
}

} // namespace sattn::checks
