#include "sattn/cli.hpp"

#include "sattn/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace sattn {

using nlohmann::json;
namespace fs = std::filesystem;

std::set<uint32_t> parse_layer_set(const std::string& spec) {
    std::set<uint32_t> out;
    if (spec.empty()) return out;
    size_t pos = 0;
    while (pos <= spec.size()) {
        size_t comma = spec.find(',', pos);
        std::string item = spec.substr(pos, comma == std::string::npos ? comma : comma - pos);
        if (item.empty()) {
            throw ValidationError("layer set: empty item in '" + spec + "'");
        }
        size_t dots = item.find("..");
        try {
            if (dots == std::string::npos) {
                out.insert(uint32_t(std::stoul(item)));
            } else {
                uint32_t a = uint32_t(std::stoul(item.substr(0, dots)));
                uint32_t b = uint32_t(std::stoul(item.substr(dots + 2)));
                if (a >= b) {
                    throw ValidationError("layer set: empty range '" + item + "'");
                }
                for (uint32_t l = a; l < b; ++l) out.insert(l);
            }
        } catch (const std::logic_error& e) {
            if (dynamic_cast<const ValidationError*>(&e)) throw;
            throw ValidationError("layer set: cannot parse '" + item + "'");
        }
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

std::string layer_set_to_string(const std::set<uint32_t>& layers) {
    // re-compress into a..b ranges
    std::string out;
    auto it = layers.begin();
    while (it != layers.end()) {
        uint32_t a = *it;
        uint32_t b = a + 1;
        ++it;
        while (it != layers.end() && *it == b) {
            ++b;
            ++it;
        }
        if (!out.empty()) out += ",";
        if (b == a + 1) {
            out += std::to_string(a);
        } else {
            out += std::to_string(a) + ".." + std::to_string(b);
        }
    }
    return out;
}

ShiftMode parse_shift_mode(const std::string& s, uint32_t override_offset) {
    if (s == "identity") return ShiftMode::identity();
    if (s == "shifted") return ShiftMode::shift_by(override_offset);
    throw ValidationError("unknown shift mode: " + s + " (want identity|shifted)");
}

void RunConfig::validate() const {
    model.validate();
    sharing.validate(model.layers);
    if (sampler.steps < 1) {
        throw ValidationError("steps must be >= 1");
    }
    if (sampler.cfg_scale < 0.0f) {
        throw ValidationError("cfg-scale must be >= 0");
    }
    if (out_dir.empty()) {
        throw ValidationError("output directory is required");
    }
    if (!ref_cache_dir.empty() && !fs::exists(ref_cache_dir / "manifest.json")) {
        throw ValidationError("reference cache not found: " + ref_cache_dir.string());
    }
}

namespace {

json model_json(const ModelConfig& m) {
    return json{{"layers", m.layers},   {"heads", m.heads},
                {"model_dim", m.model_dim}, {"text_len", m.text_len},
                {"grid_h", m.grid.h},   {"grid_w", m.grid.w},
                {"seed", m.seed}};
}

ModelConfig model_from_json(const json& j) {
    ModelConfig m;
    m.layers = j.at("layers").get<uint32_t>();
    m.heads = j.at("heads").get<uint32_t>();
    m.model_dim = j.at("model_dim").get<uint32_t>();
    m.text_len = j.at("text_len").get<uint32_t>();
    m.grid = {j.at("grid_h").get<uint32_t>(), j.at("grid_w").get<uint32_t>()};
    m.seed = j.at("seed").get<uint64_t>();
    return m;
}

json sharing_json(const SharingConfig& s) {
    return json{{"mode", to_string(s.mode)},
                {"lambda", double(s.lambda)},
                {"layers", layer_set_to_string(s.layer_set)},
                {"shift", s.shift.shifted ? "shifted" : "identity"},
                {"shift_offset", s.shift.offset}};
}

void write_trajectory(const fs::path& path, const Trajectory& traj) {
    const Matrix& first = traj.states.front();
    std::vector<float> flat;
    flat.reserve(traj.states.size() * first.size());
    for (const Matrix& m : traj.states) {
        flat.insert(flat.end(), m.data.begin(), m.data.end());
    }
    write_tensor(path, {uint32_t(traj.states.size()), first.rows, first.cols}, flat);
}

// Removes partial outputs on failure: the whole directory if we created it,
// otherwise just the files we wrote.
struct OutputDirGuard {
    fs::path dir;
    bool created = false;
    std::vector<fs::path> written;
    bool committed = false;

    explicit OutputDirGuard(const fs::path& d) : dir(d) {
        created = fs::create_directories(dir);
    }
    void track(const fs::path& p) { written.push_back(p); }
    ~OutputDirGuard() {
        if (committed) return;
        std::error_code ec;
        if (created) {
            fs::remove_all(dir, ec);
        } else {
            for (const fs::path& p : written) fs::remove(p, ec);
        }
    }
};

} // namespace

std::filesystem::path run_generate(const RunConfig& cfg) {
    cfg.validate();

    RefFeatureCache external;
    const RefBundleStore* external_store = nullptr;
    if (!cfg.ref_cache_dir.empty()) {
        external = load_cache(cfg.ref_cache_dir);
        if (external.steps != cfg.sampler.steps) {
            throw ConfigError("reference cache built for " + std::to_string(external.steps) +
                              " steps, run uses " + std::to_string(cfg.sampler.steps));
        }
        for (uint32_t l : cfg.sharing.layer_set) {
            if (!std::count(external.layers.begin(), external.layers.end(), l)) {
                throw ConfigError("reference cache lacks layer " + std::to_string(l));
            }
        }
        external_store = &external.store;
    }

    ToyDit model = init_model(cfg.model);
    GenerateSetResult set =
        generate_set(model, cfg.sampler, cfg.sharing, cfg.targets, cfg.seed, external_store);

    OutputDirGuard guard(cfg.out_dir);
    json files = json::object();
    auto emit = [&](const std::string& name, auto&& writer) {
        const fs::path p = cfg.out_dir / name;
        guard.track(p);
        writer(p);
        files[name] = file_hash_hex(p);
    };

    if (!set.reference.trajectory.states.empty()) {
        emit("ref_trajectory.satn",
             [&](const fs::path& p) { write_trajectory(p, set.reference.trajectory); });
        emit("ref_final.satn",
             [&](const fs::path& p) { write_matrix(p, set.reference.trajectory.final_state()); });
    }
    for (uint32_t k = 0; k < cfg.targets; ++k) {
        char prefix[32];
        std::snprintf(prefix, sizeof(prefix), "target_%02u", k);
        emit(std::string(prefix) + "_trajectory.satn",
             [&](const fs::path& p) { write_trajectory(p, set.targets[k].trajectory); });
        emit(std::string(prefix) + "_final.satn", [&](const fs::path& p) {
            write_matrix(p, set.targets[k].trajectory.final_state());
        });
    }

    json manifest;
    manifest["format"] = "sattn-run";
    manifest["version"] = 1;
    manifest["config"] = {{"model", model_json(cfg.model)},
                          {"sampler", {{"steps", cfg.sampler.steps},
                                       {"cfg_scale", double(cfg.sampler.cfg_scale)}}},
                          {"sharing", sharing_json(cfg.sharing)},
                          {"targets", cfg.targets},
                          {"seed", cfg.seed},
                          {"ref_cache", cfg.ref_cache_dir.string()}};
    if (set.probe) {
        emit("probe_attention.satn",
             [&](const fs::path& p) { write_matrix(p, set.probe->weights); });
        manifest["probe"] = {{"layer", set.probe->layer},
                             {"step_key", set.probe_step_key},
                             {"file", "probe_attention.satn"}};
    }
    manifest["files"] = files;

    fs::path manifest_path = cfg.out_dir / "manifest.json";
    guard.track(manifest_path);
    std::ofstream f(manifest_path, std::ios::trunc);
    if (!f) throw IoError("cannot write manifest: " + manifest_path.string());
    f << manifest.dump(2) << "\n";
    f.close();
    guard.committed = true;
    return manifest_path;
}

std::filesystem::path run_cache_ref(const CacheRefConfig& cfg) {
    cfg.model.validate();
    if (cfg.out_dir.empty()) {
        throw ValidationError("output directory is required");
    }
    if (!fs::exists(cfg.latent_file)) {
        throw ValidationError("latent file not found: " + cfg.latent_file.string());
    }
    Matrix latent = read_matrix(cfg.latent_file);
    ToyDit model = init_model(cfg.model);
    CacheOptions opts;
    opts.prompt_seed = cfg.prompt_seed;
    RefFeatureCache cache =
        cache_reference_features(latent, model, cfg.steps, cfg.layers, cfg.seed, opts);
    save_cache(cfg.out_dir, cache);
    return cfg.out_dir / "manifest.json";
}

std::array<std::pair<uint32_t, uint32_t>, 3> layer_groups(uint32_t layer_count) {
    const uint32_t b1 = layer_count / 3;
    const uint32_t b2 = (2 * layer_count) / 3;
    return {{{0, b1}, {b1, b2}, {b2, layer_count}}};
}

std::set<uint32_t> layers_for_mask(const std::string& mask, uint32_t layer_count) {
    if (mask.size() != 3 || mask.find_first_not_of("01") != std::string::npos) {
        throw ValidationError("layer-group mask must be three 0/1 digits, got '" + mask + "'");
    }
    auto groups = layer_groups(layer_count);
    std::set<uint32_t> out;
    for (int g = 0; g < 3; ++g) {
        if (mask[size_t(g)] == '1') {
            for (uint32_t l = groups[size_t(g)].first; l < groups[size_t(g)].second; ++l) {
                out.insert(l);
            }
        }
    }
    return out;
}

std::filesystem::path run_ablate(const AblateConfig& cfg) {
    cfg.model.validate();
    if (cfg.lambdas.empty() || cfg.group_masks.empty()) {
        throw ValidationError("ablate: empty lambda or mask grid");
    }
    for (float l : cfg.lambdas) {
        if (!(l > 0.0f)) throw ValidationError("ablate: lambda must be > 0");
    }
    if (cfg.out_csv.empty()) {
        throw ValidationError("ablate: output csv path is required");
    }

    ToyDit model = init_model(cfg.model);
    std::string csv = "lambda,group1,group2,group3,phi,latent_cosine,d0_mass,mean_l1,ref_mass\n";
    char line[256];
    for (const std::string& mask : cfg.group_masks) {
        const std::set<uint32_t> phi = layers_for_mask(mask, cfg.model.layers);
        for (float lambda : cfg.lambdas) {
            SharingConfig sharing;
            sharing.mode = SharingMode::selective;
            sharing.lambda = lambda;
            sharing.layer_set = phi;
            sharing.shift = cfg.shift;
            GenerateSetResult set =
                generate_set(model, cfg.sampler, sharing, cfg.targets, cfg.seed);

            std::vector<std::vector<float>> finals;
            finals.push_back(set.reference.trajectory.final_state().data);
            for (const auto& t : set.targets) {
                finals.push_back(t.trajectory.final_state().data);
            }
            const double cosine = pairwise_cosine(finals).mean;

            double d0 = std::nan(""), mean_l1 = std::nan(""), ref_mass = std::nan("");
            if (set.probe) {
                AggregateProfile prof =
                    aggregate_profile(set.probe->weights, cfg.model.text_len, cfg.model.grid);
                d0 = prof.mean_mass[0];
                mean_l1 = prof.mean_l1_distance;
                ref_mass = prof.ref_mass_total;
            }
            std::snprintf(line, sizeof(line), "%.9g,%c,%c,%c,%s,%.9g,%.9g,%.9g,%.9g\n",
                          double(lambda), mask[0], mask[1], mask[2],
                          layer_set_to_string(phi).c_str(), cosine, d0, mean_l1, ref_mass);
            csv += line;
        }
    }

    if (cfg.out_csv.has_parent_path()) {
        fs::create_directories(cfg.out_csv.parent_path());
    }
    std::ofstream f(cfg.out_csv, std::ios::trunc);
    if (!f) throw IoError("cannot write: " + cfg.out_csv.string());
    f << csv;
    return cfg.out_csv;
}

std::filesystem::path run_analyze(const AnalyzeConfig& cfg) {
    const fs::path manifest_path = cfg.run_dir / "manifest.json";
    if (!fs::exists(manifest_path)) {
        throw ValidationError("run directory has no manifest: " + cfg.run_dir.string());
    }
    std::ifstream f(manifest_path);
    json manifest = json::parse(f, nullptr, false);
    if (manifest.is_discarded() || manifest.value("format", "") != "sattn-run") {
        throw ValidationError("not a run directory: " + cfg.run_dir.string());
    }
    const ModelConfig model = model_from_json(manifest.at("config").at("model"));

    const fs::path out_dir = cfg.run_dir / "analysis";
    fs::create_directories(out_dir);

    CollisionConfig coll;
    coll.grid = model.grid;
    coll.head_dim = model.head_dim();
    coll.trials = cfg.trials;
    coll.seed = cfg.seed;
    CollisionSummary summary = collision_experiment(coll);
    write_collision_json(out_dir / "collision.json", summary);

    json report;
    report["collision"] = {{"mean_d0_identity", summary.mean_d0_identity},
                           {"mean_d0_shifted", summary.mean_d0_shifted},
                           {"sign_test_p", summary.sign_test_p},
                           {"trials", summary.config.trials}};

    if (manifest.contains("probe")) {
        const std::string probe_file = manifest.at("probe").at("file").get<std::string>();
        Matrix weights = read_matrix(cfg.run_dir / probe_file);
        AggregateProfile prof = aggregate_profile(weights, model.text_len, model.grid);
        write_profile_csv(out_dir / "profile.csv", prof);
        report["profile"] = {{"d0_mass", prof.mean_mass[0]},
                             {"mean_l1", prof.mean_l1_distance},
                             {"ref_mass_total", prof.ref_mass_total},
                             {"full_row_total", prof.full_row_total},
                             {"probe_layer", manifest.at("probe").at("layer").get<uint32_t>()}};
    }

    if (!cfg.embedding_files.empty()) {
        std::vector<std::vector<float>> embeddings;
        for (const fs::path& p : cfg.embedding_files) {
            if (!fs::exists(p)) {
                throw ValidationError("embedding file not found: " + p.string());
            }
            TensorFile t = read_tensor(p);
            if (t.dims.size() == 1) {
                embeddings.push_back(std::move(t.values));
            } else if (t.dims.size() == 2) {
                Matrix m(t.dims[0], t.dims[1], std::move(t.values));
                for (uint32_t r = 0; r < m.rows; ++r) {
                    embeddings.emplace_back(m.row(r).begin(), m.row(r).end());
                }
            } else {
                throw ValidationError("embeddings must be rank-1 or rank-2: " + p.string());
            }
        }
        MetricReport metric = pairwise_cosine(embeddings);
        write_pairs_csv(out_dir / "pairs.csv", metric);
        report["pairwise_cosine"] = {{"mean", metric.mean}, {"count", metric.count}};
    }

    fs::path report_path = out_dir / "summary.json";
    std::ofstream rf(report_path, std::ios::trunc);
    if (!rf) throw IoError("cannot write: " + report_path.string());
    rf << report.dump(2) << "\n";
    return report_path;
}

} // namespace sattn
