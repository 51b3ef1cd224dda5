#include "sattn/cli.hpp"
#include "checks/criteria.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

std::string trim(const std::string& s) {
    const char* ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return {};
    return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

// Flat key=value config files: `--config FILE` expands to the matching
// long flags before parsing, so explicit command-line flags always win.
std::vector<std::string> expand_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (size_t i = 0; i < args.size();) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) {
                throw sattn::ValidationError("--config requires a file path");
            }
            config_path = args[i + 1];
            args.erase(args.begin() + long(i), args.begin() + long(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + long(i));
        } else {
            ++i;
        }
    }
    if (config_path.empty()) return args;

    std::ifstream f(config_path);
    if (!f) {
        throw sattn::ValidationError("cannot open config file: " + config_path);
    }
    std::set<std::string> given;
    for (const std::string& a : args) {
        if (a.rfind("--", 0) == 0) given.insert(a.substr(0, a.find('=')));
    }
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw sattn::ValidationError(config_path + ":" + std::to_string(lineno) +
                                         ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            throw sattn::ValidationError(config_path + ":" + std::to_string(lineno) +
                                         ": empty key");
        }
        const std::string flag = "--" + key;
        if (!given.count(flag)) {
            args.push_back(flag);
            args.push_back(value);
        }
    }
    return args;
}

struct ModelFlags {
    uint32_t layers = 8;
    uint32_t heads = 4;
    uint32_t dim = 64;
    uint32_t text_len = 4;
    uint32_t grid_h = 8;
    uint32_t grid_w = 8;
    uint64_t seed = 0;

    void attach(CLI::App* cmd) {
        cmd->add_option("--model-layers", layers, "transformer layer count");
        cmd->add_option("--heads", heads, "attention heads");
        cmd->add_option("--dim", dim, "model dimension");
        cmd->add_option("--text-len", text_len, "text token count");
        cmd->add_option("--grid-h", grid_h, "latent grid height");
        cmd->add_option("--grid-w", grid_w, "latent grid width");
        cmd->add_option("--model-seed", seed, "weight seed");
    }
    sattn::ModelConfig to_config() const {
        sattn::ModelConfig m;
        m.layers = layers;
        m.heads = heads;
        m.model_dim = dim;
        m.text_len = text_len;
        m.grid = {grid_h, grid_w};
        m.seed = seed;
        return m;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"shared-attention laboratory for a toy multi-modal DiT"};
    app.require_subcommand(1);
    app.footer("Any subcommand accepts --config FILE with flat key=value lines\n"
               "(# comments allowed); explicit flags override file values.");

    // generate
    auto* gen = app.add_subcommand("generate", "sample a reference and sharing targets");
    ModelFlags gen_model;
    gen_model.attach(gen);
    std::string gen_mode = "selective", gen_layers = "", gen_shift = "shifted";
    float gen_lambda = 1.1f, gen_cfg_scale = 3.5f;
    uint32_t gen_steps = 30, gen_targets = 2, gen_shift_offset = 0;
    uint64_t gen_seed = 0;
    std::string gen_out, gen_ref_cache;
    gen->add_option("--mode", gen_mode, "vanilla|naive|selective")->capture_default_str();
    gen->add_option("--lambda", gen_lambda, "reference key scale")->capture_default_str();
    gen->add_option("--layers", gen_layers, "sharing layer set, e.g. 19..57 (default: groups 2+3)");
    gen->add_option("--shift", gen_shift, "identity|shifted")->capture_default_str();
    gen->add_option("--shift-offset", gen_shift_offset, "column offset (0 = grid width)");
    gen->add_option("--steps", gen_steps, "sampling steps")->capture_default_str();
    gen->add_option("--cfg-scale", gen_cfg_scale, "guidance scale")->capture_default_str();
    gen->add_option("--seed", gen_seed, "run seed (noise and prompts)");
    gen->add_option("--targets", gen_targets, "target stream count")->capture_default_str();
    gen->add_option("--ref-cache", gen_ref_cache, "external reference feature directory");
    gen->add_option("--out", gen_out, "output run directory")->required();

    // cache-ref
    auto* cache = app.add_subcommand("cache-ref", "extract reference features from a latent");
    ModelFlags cache_model;
    cache_model.attach(cache);
    std::string cache_latent, cache_layers = "", cache_out;
    uint32_t cache_steps = 30;
    uint64_t cache_seed = 0;
    int64_t cache_prompt_seed = -1;
    cache->add_option("--latent", cache_latent, "latent tensor file (NxD)")->required();
    cache->add_option("--steps", cache_steps, "timestep count T")->capture_default_str();
    cache->add_option("--layers", cache_layers, "layers to record (default: groups 2+3)");
    cache->add_option("--seed", cache_seed, "noise seed");
    cache->add_option("--prompt-seed", cache_prompt_seed, "prompt seed (-1 = empty prompt)");
    cache->add_option("--out", cache_out, "cache directory")->required();

    // ablate
    auto* ablate = app.add_subcommand("ablate", "lambda x layer-group ablation grid");
    ModelFlags ablate_model;
    ablate_model.layers = 6;
    ablate_model.heads = 2;
    ablate_model.dim = 16;
    ablate_model.text_len = 2;
    ablate_model.grid_h = 2;
    ablate_model.grid_w = 2;
    ablate_model.attach(ablate);
    std::vector<float> ablate_lambdas = {0.9f, 0.95f, 1.0f, 1.05f, 1.1f, 1.15f};
    std::vector<std::string> ablate_masks = {"100", "010", "001"};
    std::string ablate_out, ablate_shift = "shifted";
    uint32_t ablate_steps = 2, ablate_targets = 2;
    uint64_t ablate_seed = 0;
    ablate->add_option("--lambdas", ablate_lambdas, "lambda grid")->delimiter(',');
    ablate->add_option("--masks", ablate_masks, "layer-group masks, e.g. 010")->delimiter(',');
    ablate->add_option("--shift", ablate_shift, "identity|shifted")->capture_default_str();
    ablate->add_option("--steps", ablate_steps, "sampling steps")->capture_default_str();
    ablate->add_option("--targets", ablate_targets, "target stream count")->capture_default_str();
    ablate->add_option("--seed", ablate_seed, "run seed");
    ablate->add_option("--out", ablate_out, "output csv path")->required();

    // analyze
    auto* analyze = app.add_subcommand("analyze", "collision experiment and run profiles");
    std::string analyze_run;
    uint32_t analyze_trials = 200;
    uint64_t analyze_seed = 7;
    std::vector<std::string> analyze_embeddings;
    analyze->add_option("--run", analyze_run, "run directory to analyze")->required();
    analyze->add_option("--trials", analyze_trials, "collision trials")->capture_default_str();
    analyze->add_option("--seed", analyze_seed, "trial seed");
    analyze->add_option("--embeddings", analyze_embeddings, "embedding tensor files")
        ->delimiter(',');

    // selftest
    auto* selftest = app.add_subcommand("selftest", "run the full invariant suite");

    try {
        std::vector<std::string> args = expand_config_args(argc, argv);
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        app.exit(e);
        return kExitValidation;
    } catch (const sattn::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }

    try {
        if (gen->parsed()) {
            sattn::RunConfig rc;
            rc.model = gen_model.to_config();
            rc.sampler.steps = gen_steps;
            rc.sampler.cfg_scale = gen_cfg_scale;
            rc.sharing.mode = sattn::parse_sharing_mode(gen_mode);
            rc.sharing.lambda = gen_lambda;
            rc.sharing.layer_set = gen_layers.empty()
                                       ? sattn::layers_for_mask("011", rc.model.layers)
                                       : sattn::parse_layer_set(gen_layers);
            rc.sharing.shift = sattn::parse_shift_mode(gen_shift, gen_shift_offset);
            rc.targets = gen_targets;
            rc.seed = gen_seed;
            rc.out_dir = gen_out;
            rc.ref_cache_dir = gen_ref_cache;
            auto manifest = sattn::run_generate(rc);
            std::cerr << "run written: " << manifest.parent_path().string() << "\n";
        } else if (cache->parsed()) {
            sattn::CacheRefConfig cc;
            cc.model = cache_model.to_config();
            cc.latent_file = cache_latent;
            cc.steps = cache_steps;
            cc.layers = cache_layers.empty() ? sattn::layers_for_mask("011", cc.model.layers)
                                             : sattn::parse_layer_set(cache_layers);
            cc.seed = cache_seed;
            if (cache_prompt_seed >= 0) cc.prompt_seed = uint64_t(cache_prompt_seed);
            cc.out_dir = cache_out;
            auto manifest = sattn::run_cache_ref(cc);
            std::cerr << "cache written: " << manifest.parent_path().string() << "\n";
        } else if (ablate->parsed()) {
            sattn::AblateConfig ac;
            ac.model = ablate_model.to_config();
            ac.sampler.steps = ablate_steps;
            ac.shift = sattn::parse_shift_mode(ablate_shift, 0);
            ac.lambdas = ablate_lambdas;
            ac.group_masks = ablate_masks;
            ac.targets = ablate_targets;
            ac.seed = ablate_seed;
            ac.out_csv = ablate_out;
            auto csv = sattn::run_ablate(ac);
            std::cerr << "grid written: " << csv.string() << "\n";
        } else if (analyze->parsed()) {
            sattn::AnalyzeConfig ac;
            ac.run_dir = analyze_run;
            ac.trials = analyze_trials;
            ac.seed = analyze_seed;
            for (const std::string& p : analyze_embeddings) ac.embedding_files.emplace_back(p);
            auto report = sattn::run_analyze(ac);
            std::cerr << "analysis written: " << report.string() << "\n";
        } else if (selftest->parsed()) {
            auto results = sattn::checks::run_acceptance_checks();
            bool all = true;
            for (const auto& r : results) {
                std::fprintf(stderr, "%s %2d %-32s %s\n", r.pass ? "PASS" : "FAIL", r.id,
                             r.name.c_str(), r.detail.c_str());
                all = all && r.pass;
            }
            if (!all) return kExitRuntime;
        }
    } catch (const sattn::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const sattn::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
