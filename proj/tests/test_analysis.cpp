#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sattn/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace sattn;

TEST_CASE("locality profile: one-hot at the query's own cell") {
    std::vector<float> row(16, 0.0f);
    row[5] = 1.0f; // (1,1) on a 4x4 grid
    LocalityProfile p = locality_profile(row, {1, 1}, {4, 4});
    REQUIRE(p.mass.size() == 7);
    CHECK(p.mass[0] == doctest::Approx(1.0));
    for (size_t d = 1; d < p.mass.size(); ++d) CHECK(p.mass[d] == 0.0);
}

TEST_CASE("locality profile: uniform weights count ring sizes") {
    std::vector<float> row(4, 0.25f);
    LocalityProfile p = locality_profile(row, {0, 0}, {2, 2});
    REQUIRE(p.mass.size() == 3);
    CHECK(p.mass[0] == doctest::Approx(0.25));
    CHECK(p.mass[1] == doctest::Approx(0.5));
    CHECK(p.mass[2] == doctest::Approx(0.25));
}

TEST_CASE("locality profile partitions the reference mass") {
    SeededRng rng(71, 0);
    for (int c = 0; c < 20; ++c) {
        const uint32_t h = 1 + rng.next_u32() % 6;
        const uint32_t w = 1 + rng.next_u32() % 6;
        std::vector<float> row(size_t(h) * w);
        double total = 0.0;
        for (float& v : row) {
            v = rng.next_float();
            total += v;
        }
        GridPos q{rng.next_u32() % h, rng.next_u32() % w};
        LocalityProfile p = locality_profile(row, q, {h, w});
        double bucketed = 0.0;
        for (double m : p.mass) bucketed += m;
        CHECK(std::abs(bucketed - total) <= 1e-6);
        CHECK(std::abs(p.ref_mass_total - total) <= 1e-6);
    }
    CHECK_THROWS_AS(locality_profile(std::vector<float>(3), {0, 0}, {2, 2}), ShapeError);
}

TEST_CASE("collision experiment separates identity from shifted positions") {
    CollisionConfig cfg;
    cfg.grid = {4, 4};
    cfg.head_dim = 8;
    cfg.trials = 60;
    cfg.seed = 3;
    CollisionSummary s = collision_experiment(cfg);
    CHECK(s.mean_d0_identity > s.mean_d0_shifted);
    CHECK(s.sign_test_p < 0.01);
    CHECK(s.min_spread_mass > 0.0);
    REQUIRE(s.d0_identity.size() == 60);

    // deterministic given the seed
    CollisionSummary s2 = collision_experiment(cfg);
    for (size_t i = 0; i < s.d0_identity.size(); ++i) {
        CHECK(s.d0_identity[i] == s2.d0_identity[i]);
        CHECK(s.d0_shifted[i] == s2.d0_shifted[i]);
    }

    // single trial is reproducible too
    cfg.trials = 1;
    CollisionSummary one = collision_experiment(cfg);
    CHECK(one.d0_identity[0] == s.d0_identity[0]);
}

TEST_CASE("thread budget honors the environment cap") {
    setenv("SHARED_ATTN_THREADS", "2", 1);
    CHECK(thread_budget(8) == 2);
    CHECK(thread_budget(1) == 1);
    setenv("SHARED_ATTN_THREADS", "junk", 1);
    CHECK(thread_budget(3) == 3);
    unsetenv("SHARED_ATTN_THREADS");
    CHECK(thread_budget(5) == 5);
}

TEST_CASE("collision experiment is thread-count invariant") {
    CollisionConfig cfg;
    cfg.grid = {4, 4};
    cfg.head_dim = 8;
    cfg.trials = 16;
    cfg.seed = 5;
    cfg.threads = 1;
    CollisionSummary a = collision_experiment(cfg);
    cfg.threads = 4;
    CollisionSummary b = collision_experiment(cfg);
    CHECK(a.mean_d0_identity == b.mean_d0_identity);
    CHECK(a.mean_d0_shifted == b.mean_d0_shifted);
}

TEST_CASE("pairwise cosine closed forms") {
    std::vector<std::vector<float>> same = {{1, 2, 3}, {1, 2, 3}, {1, 2, 3}};
    MetricReport r = pairwise_cosine(same);
    CHECK(r.count == 3);
    CHECK(r.mean == doctest::Approx(1.0));

    std::vector<std::vector<float>> ortho = {{1, 0}, {0, 1}};
    CHECK(pairwise_cosine(ortho).mean == doctest::Approx(0.0));

    const float s = 1.0f / std::sqrt(2.0f);
    std::vector<std::vector<float>> trio = {{1, 0}, {s, s}, {0, 1}};
    MetricReport t = pairwise_cosine(trio);
    CHECK(t.count == 3);
    CHECK(t.mean == doctest::Approx((s + s + 0.0) / 3.0).epsilon(1e-6));
}

TEST_CASE("pairwise cosine is permutation invariant") {
    SeededRng rng(72, 0);
    std::vector<std::vector<float>> emb;
    for (int i = 0; i < 5; ++i) {
        std::vector<float> v(8);
        for (float& x : v) x = rng.next_gaussian();
        emb.push_back(v);
    }
    const double base = pairwise_cosine(emb).mean;
    std::vector<std::vector<float>> shuffled = {emb[3], emb[0], emb[4], emb[2], emb[1]};
    CHECK(pairwise_cosine(shuffled).mean == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("pairwise cosine validation") {
    CHECK_THROWS_AS(pairwise_cosine({{1.0f, 0.0f}}), ValidationError);
    CHECK_THROWS_AS(pairwise_cosine({{1.0f, 0.0f}, {0.0f, 0.0f}}), ValidationError);
    CHECK_THROWS_AS(pairwise_cosine({{1.0f, 0.0f}, {1.0f, 0.0f, 1.0f}}), ShapeError);
}

TEST_CASE("csv and json emitters write the documented schemas") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "sattn_analysis_test";
    fs::create_directories(dir);

    AggregateProfile prof;
    prof.mean_mass = {0.5, 0.3, 0.2};
    prof.ref_mass_total = 1.0;
    write_profile_csv(dir / "profile.csv", prof);
    std::ifstream pf(dir / "profile.csv");
    std::string line;
    std::getline(pf, line);
    CHECK(line == "distance,mass");
    std::getline(pf, line);
    CHECK(line == "0,0.5");

    MetricReport rep = pairwise_cosine({{1.0f, 0.0f}, {0.0f, 1.0f}});
    write_pairs_csv(dir / "pairs.csv", rep);
    std::ifstream qf(dir / "pairs.csv");
    std::getline(qf, line);
    CHECK(line == "i,j,cosine");
    std::getline(qf, line);
    CHECK(line == "0,1,0");

    CollisionConfig cfg;
    cfg.grid = {2, 2};
    cfg.head_dim = 4;
    cfg.trials = 2;
    write_collision_json(dir / "collision.json", collision_experiment(cfg));
    std::ifstream jf(dir / "collision.json");
    std::string text{std::istreambuf_iterator<char>(jf), std::istreambuf_iterator<char>()};
    CHECK(text.find("mean_d0_identity") != std::string::npos);
    CHECK(text.find("sign_test_p") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("aggregate profile covers both shared key layouts") {
    // selective layout: [M txt | N tar img | N ref img]
    const uint32_t m = 1, h = 2, w = 2, n = 4;
    Matrix weights(m + n, m + 2 * n);
    // each image query puts all mass on its own reference key
    for (uint32_t q = 0; q < n; ++q) weights(m + q, m + n + q) = 1.0f;
    AggregateProfile prof = aggregate_profile(weights, m, {h, w});
    CHECK(prof.mean_mass[0] == doctest::Approx(1.0));
    CHECK(prof.mean_l1_distance == doctest::Approx(0.0));
    CHECK(prof.ref_mass_total == doctest::Approx(1.0));
}
