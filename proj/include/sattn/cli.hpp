#pragma once

#include "sattn/analysis.hpp"
#include "sattn/refcache.hpp"

#include <array>
#include <filesystem>

namespace sattn {

// Layer set grammar: comma-separated half-open ranges `a..b` or single
// indices, e.g. "19..57" or "0..2,5..8" or "3".
std::set<uint32_t> parse_layer_set(const std::string& spec);
std::string layer_set_to_string(const std::set<uint32_t>& layers);

ShiftMode parse_shift_mode(const std::string& s, uint32_t override_offset);

struct RunConfig {
    ModelConfig model;
    SamplerConfig sampler;
    SharingConfig sharing;
    uint32_t targets = 2;
    uint64_t seed = 0;
    std::filesystem::path out_dir;
    std::filesystem::path ref_cache_dir; // optional: external reference features

    void validate() const;
};

// Writes trajectories, final latents, the shared-attention probe, and a
// manifest with content hashes. Returns the manifest path.
std::filesystem::path run_generate(const RunConfig& cfg);

struct CacheRefConfig {
    ModelConfig model;
    std::filesystem::path latent_file;
    uint32_t steps = 30;
    std::set<uint32_t> layers;
    uint64_t seed = 0;
    std::optional<uint64_t> prompt_seed;
    std::filesystem::path out_dir;
};

std::filesystem::path run_cache_ref(const CacheRefConfig& cfg);

struct AblateConfig {
    ModelConfig model;
    SamplerConfig sampler;
    ShiftMode shift = ShiftMode::shift_by(0);
    std::vector<float> lambdas = {0.9f, 0.95f, 1.0f, 1.05f, 1.1f, 1.15f};
    // Layer-group masks over thirds of the stack; "010" = middle group only.
    std::vector<std::string> group_masks = {"100", "010", "001"};
    uint32_t targets = 2;
    uint64_t seed = 0;
    std::filesystem::path out_csv;
};

// Thirds of the layer stack: [0,L/3), [L/3,2L/3), [2L/3,L).
std::array<std::pair<uint32_t, uint32_t>, 3> layer_groups(uint32_t layer_count);
std::set<uint32_t> layers_for_mask(const std::string& mask, uint32_t layer_count);

std::filesystem::path run_ablate(const AblateConfig& cfg);

struct AnalyzeConfig {
    std::filesystem::path run_dir;
    uint32_t trials = 200;
    uint64_t seed = 7;
    std::vector<std::filesystem::path> embedding_files; // optional rank-2 tensors
};

std::filesystem::path run_analyze(const AnalyzeConfig& cfg);

} // namespace sattn
