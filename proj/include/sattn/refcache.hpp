#pragma once

#include "sattn/ditsim.hpp"

#include <filesystem>

namespace sattn {

// Approximate per-timestep reference features for an externally supplied
// latent: one noise draw, interpolation forwards at every step, vanilla
// passes through the model, bundles recorded at the configured layers.

struct CacheOptions {
    std::optional<uint64_t> prompt_seed; // nullopt -> empty (zero) prompt
    bool per_step_noise_debug = false;   // test hook: redraw noise each step
};

struct RefFeatureCache {
    uint32_t steps = 0;             // T; entries cover t = 0..T
    std::vector<uint32_t> layers;   // recorded layer set, sorted
    uint64_t seed = 0;
    RefBundleStore store;           // (T+1) * |layers| entries

    size_t entry_count() const { return store.size(); }
};

// (t/T) * noise + (1 - t/T) * latent, elementwise.
Matrix interpolate_noisy_latent(const Matrix& latent, const Matrix& noise, uint32_t t, uint32_t T);

RefFeatureCache cache_reference_features(const Matrix& latent, const ToyDit& model, uint32_t T,
                                         const std::set<uint32_t>& layers, uint64_t seed,
                                         const CacheOptions& options = {});

// Directory layout: one tensor file per (t, layer, role) named
// t####_l###_<role>.satn, plus manifest.json written last.
void save_cache(const std::filesystem::path& dir, const RefFeatureCache& cache);
RefFeatureCache load_cache(const std::filesystem::path& dir);

// Order-independent content checksum over all bundles.
uint64_t cache_checksum(const RefFeatureCache& cache);

} // namespace sattn
