#include "sattn/refcache.hpp"

#include "sattn/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>

namespace sattn {

using nlohmann::json;

Matrix interpolate_noisy_latent(const Matrix& latent, const Matrix& noise, uint32_t t,
                                uint32_t T) {
    if (!latent.same_shape(noise)) {
        throw ShapeError("interpolate: latent and noise shapes differ");
    }
    if (T < 1) {
        throw ValidationError("interpolate: T must be >= 1");
    }
    if (t > T) {
        throw ValidationError("interpolate: t > T");
    }
    const float a = float(t) / float(T);
    const float b = 1.0f - a;
    Matrix out(latent.rows, latent.cols);
    for (size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = a * noise.data[i] + b * latent.data[i];
    }
    return out;
}

RefFeatureCache cache_reference_features(const Matrix& latent, const ToyDit& model, uint32_t T,
                                         const std::set<uint32_t>& layers, uint64_t seed,
                                         const CacheOptions& options) {
    const ModelConfig& cfg = model.cfg;
    if (latent.rows != cfg.image_tokens() || latent.cols != cfg.model_dim) {
        throw ValidationError("cache: latent dims do not match the model grid");
    }
    if (T < 1) {
        throw ValidationError("cache: T must be >= 1");
    }
    for (uint32_t l : layers) {
        if (l >= cfg.layers) {
            throw ValidationError("cache: layer " + std::to_string(l) + " out of range");
        }
    }

    RefFeatureCache cache;
    cache.steps = T;
    cache.layers.assign(layers.begin(), layers.end());
    cache.seed = seed;

    // one noise draw, reused at every t
    Matrix noise = draw_noise_latent(cfg, seed, 0);
    Matrix prompt(cfg.text_len, cfg.model_dim);
    if (options.prompt_seed) {
        prompt = make_prompt_embedding(cfg, *options.prompt_seed, 0);
    }

    SharingConfig vanilla;
    vanilla.mode = SharingMode::vanilla;
    const RopeParams rope = RopeParams::even_split(cfg.head_dim());
    const AttentionPositions positions =
        make_attention_positions(cfg.grid, cfg.text_len, ShiftMode::identity(), rope);

    SeededRng debug_rng = noise_rng(seed, 1);
    for (uint32_t step = 0; step <= T; ++step) {
        const uint32_t t = T - step;
        if (options.per_step_noise_debug) {
            fill_gaussian(noise, debug_rng);
        }
        Matrix x = interpolate_noisy_latent(latent, noise, t, T);
        ForwardResult fw =
            forward(model, {prompt, x}, double(t) / double(T), vanilla, positions, nullptr);
        for (uint32_t l : cache.layers) {
            cache.store.emplace(StepLayerKey{t, l}, std::move(fw.layer_qkv[l]));
        }
    }
    return cache;
}

namespace {

constexpr const char* kRoles[6] = {"q_txt", "k_txt", "v_txt", "q_img", "k_img", "v_img"};

const Matrix& role_of(const QkvBundle& b, int idx) {
    switch (idx) {
        case 0: return b.q_txt;
        case 1: return b.k_txt;
        case 2: return b.v_txt;
        case 3: return b.q_img;
        case 4: return b.k_img;
        default: return b.v_img;
    }
}

Matrix& role_of(QkvBundle& b, int idx) {
    return const_cast<Matrix&>(role_of(const_cast<const QkvBundle&>(b), idx));
}

std::string bundle_file(uint32_t t, uint32_t layer, int role) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "t%04u_l%03u_%s.satn", t, layer, kRoles[role]);
    return buf;
}

} // namespace

void save_cache(const std::filesystem::path& dir, const RefFeatureCache& cache) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "sattn-refcache";
    manifest["version"] = 1;
    manifest["steps"] = cache.steps;
    manifest["layers"] = cache.layers;
    manifest["seed"] = cache.seed;
    if (!cache.store.empty()) {
        const QkvBundle& first = cache.store.begin()->second;
        manifest["shapes"] = {{"text_len", first.text_len()},
                              {"image_tokens", first.image_len()},
                              {"width", first.width()}};
    }
    json entries = json::array();
    for (const auto& [key, bundle] : cache.store) {
        json e;
        e["t"] = key.t;
        e["layer"] = key.layer;
        json files = json::object();
        for (int role = 0; role < 6; ++role) {
            const std::string name = bundle_file(key.t, key.layer, role);
            write_matrix(dir / name, role_of(bundle, role));
            files[kRoles[role]] = name;
        }
        e["files"] = files;
        entries.push_back(e);
    }
    manifest["entries"] = entries;
    // manifest last: its presence marks a complete cache
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    if (!f) throw IoError("cannot write manifest in " + dir.string());
    f << manifest.dump(2) << "\n";
}

RefFeatureCache load_cache(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream f(manifest_path);
    if (!f) throw IoError("missing cache manifest: " + manifest_path.string());
    json manifest = json::parse(f, nullptr, /*allow_exceptions=*/false);
    if (manifest.is_discarded() || manifest.value("format", "") != "sattn-refcache") {
        throw IoError("not a reference cache: " + dir.string());
    }
    RefFeatureCache cache;
    cache.steps = manifest.at("steps").get<uint32_t>();
    cache.layers = manifest.at("layers").get<std::vector<uint32_t>>();
    cache.seed = manifest.at("seed").get<uint64_t>();
    for (const json& e : manifest.at("entries")) {
        StepLayerKey key{e.at("t").get<uint32_t>(), e.at("layer").get<uint32_t>()};
        QkvBundle bundle;
        for (int role = 0; role < 6; ++role) {
            const std::string name = e.at("files").at(kRoles[role]).get<std::string>();
            role_of(bundle, role) = read_matrix(dir / name);
        }
        bundle.check_coherent();
        cache.store.emplace(key, std::move(bundle));
    }
    const size_t expect = size_t(cache.steps + 1) * cache.layers.size();
    if (cache.store.size() != expect) {
        throw IoError("cache entry count mismatch in " + dir.string());
    }
    return cache;
}

uint64_t cache_checksum(const RefFeatureCache& cache) {
    uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, size_t bytes) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < bytes; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& [key, bundle] : cache.store) {
        mix(&key.t, sizeof(key.t));
        mix(&key.layer, sizeof(key.layer));
        for (int role = 0; role < 6; ++role) {
            const Matrix& m = role_of(bundle, role);
            mix(m.data.data(), m.data.size() * sizeof(float));
        }
    }
    return h;
}

} // namespace sattn
