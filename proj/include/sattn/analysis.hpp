#pragma once

#include "sattn/ditsim.hpp"

#include <filesystem>

namespace sattn {

// Attention mass over reference image keys, bucketed by L1 grid distance
// from the query coordinates. Buckets run 0..(h-1)+(w-1).
struct LocalityProfile {
    std::vector<double> mass;
    GridPos query;
    double ref_mass_total = 0.0; // sum over the reference keys (== sum of mass)
};

LocalityProfile locality_profile(std::span<const float> ref_key_weights, GridPos query,
                                 Grid grid);

// Mean profile over all image queries of a probe weight matrix whose last N
// key columns are the reference image keys.
struct AggregateProfile {
    std::vector<double> mean_mass;
    double ref_mass_total = 0.0;  // mean over queries
    double full_row_total = 0.0;  // always 1 for softmax rows; reported anyway
    double mean_l1_distance = 0.0;
};

AggregateProfile aggregate_profile(const Matrix& probe_weights, uint32_t text_len, Grid grid);

// Content-equal Q/K drawn at random; attention computed over the reference
// keys under identity vs shifted coordinates. Identity collides, so its
// distance-0 mass dominates; the margin is measured, the direction tested.
struct CollisionConfig {
    Grid grid{8, 8};
    uint32_t head_dim = 16;
    uint32_t trials = 200;
    uint64_t seed = 7;
    uint32_t threads = 0; // 0 -> hardware, capped by SHARED_ATTN_THREADS
};

struct CollisionSummary {
    CollisionConfig config;
    std::vector<double> d0_identity; // per trial, mean over queries
    std::vector<double> d0_shifted;
    double mean_d0_identity = 0.0;
    double mean_d0_shifted = 0.0;
    uint32_t identity_wins = 0;   // trials with identity d0 strictly greater
    double sign_test_p = 1.0;     // one-sided, H0: win probability 1/2
    double min_spread_mass = 0.0; // min over trials/queries of shifted mass at distance >= 1
};

CollisionSummary collision_experiment(const CollisionConfig& cfg);

// Mean cosine over all unordered pairs.
struct PairCosine {
    uint32_t i = 0, j = 0;
    double cosine = 0.0;
};

struct MetricReport {
    std::vector<PairCosine> pairs;
    double mean = 0.0;
    uint32_t count = 0; // n(n-1)/2
};

MetricReport pairwise_cosine(const std::vector<std::vector<float>>& embeddings);

// CSV / JSON emit. Profiles: `distance,mass`; pairs: `i,j,cosine`.
void write_profile_csv(const std::filesystem::path& path, const AggregateProfile& profile);
void write_pairs_csv(const std::filesystem::path& path, const MetricReport& report);
void write_collision_json(const std::filesystem::path& path, const CollisionSummary& summary);

uint32_t thread_budget(uint32_t requested);

} // namespace sattn
