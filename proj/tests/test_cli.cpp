#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sattn/cli.hpp"
#include "sattn/tensor_io.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

using namespace sattn;
namespace fs = std::filesystem;

#ifndef SATTN_CLI_PATH
#define SATTN_CLI_PATH "./sattn"
#endif

namespace {

fs::path temp_root() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "sattn_cli_test";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(SATTN_CLI_PATH) + " " + args + " 2>/dev/null";
    int status = std::system(cmd.c_str());
    if (status < 0) return -1;
    return WEXITSTATUS(status);
}

std::string model_flags() {
    return "--model-layers 4 --heads 2 --dim 16 --text-len 2 --grid-h 2 --grid-w 2";
}

std::vector<char> read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

} // namespace

TEST_CASE("layer set grammar") {
    CHECK(parse_layer_set("19..57").size() == 38);
    CHECK(parse_layer_set("3") == std::set<uint32_t>{3});
    CHECK(parse_layer_set("0..2,5..7,9") == std::set<uint32_t>{0, 1, 5, 6, 9});
    CHECK(parse_layer_set("").empty());
    CHECK_THROWS_AS(parse_layer_set("7..3"), ValidationError);
    CHECK_THROWS_AS(parse_layer_set("a..b"), ValidationError);
    CHECK_THROWS_AS(parse_layer_set("1,,2"), ValidationError);

    CHECK(layer_set_to_string(parse_layer_set("19..57")) == "19..57");
    CHECK(layer_set_to_string(parse_layer_set("0..2,5..7,9")) == "0..2,5..7,9");
}

TEST_CASE("layer groups split the stack into thirds") {
    auto g = layer_groups(57);
    CHECK(g[0] == std::pair<uint32_t, uint32_t>{0, 19});
    CHECK(g[1] == std::pair<uint32_t, uint32_t>{19, 38});
    CHECK(g[2] == std::pair<uint32_t, uint32_t>{38, 57});
    auto g8 = layer_groups(8);
    CHECK(g8[0].second == 2);
    CHECK(g8[2] == std::pair<uint32_t, uint32_t>{5, 8});

    CHECK(layers_for_mask("010", 57) == parse_layer_set("19..38"));
    CHECK(layers_for_mask("011", 57) == parse_layer_set("19..57"));
    CHECK(layers_for_mask("000", 6).empty());
    CHECK_THROWS_AS(layers_for_mask("01", 6), ValidationError);
    CHECK_THROWS_AS(layers_for_mask("012", 6), ValidationError);
}

TEST_CASE("generate writes a complete, reproducible run directory") {
    RunConfig rc;
    rc.model.layers = 4;
    rc.model.heads = 2;
    rc.model.model_dim = 16;
    rc.model.text_len = 2;
    rc.model.grid = {2, 2};
    rc.sampler.steps = 2;
    rc.sharing.layer_set = {2, 3};
    rc.targets = 2;
    rc.seed = 5;
    rc.out_dir = temp_root() / "runA";
    run_generate(rc);

    CHECK(fs::exists(rc.out_dir / "manifest.json"));
    CHECK(fs::exists(rc.out_dir / "ref_trajectory.satn"));
    CHECK(fs::exists(rc.out_dir / "target_00_final.satn"));
    CHECK(fs::exists(rc.out_dir / "target_01_trajectory.satn"));
    CHECK(fs::exists(rc.out_dir / "probe_attention.satn"));

    TensorFile traj = read_tensor(rc.out_dir / "ref_trajectory.satn");
    REQUIRE(traj.dims.size() == 3);
    CHECK(traj.dims[0] == 3); // steps + 1
    CHECK(traj.dims[1] == 4);
    CHECK(traj.dims[2] == 16);

    RunConfig rc2 = rc;
    rc2.out_dir = temp_root() / "runB";
    run_generate(rc2);
    CHECK(read_bytes(rc.out_dir / "manifest.json") == read_bytes(rc2.out_dir / "manifest.json"));
    CHECK(read_bytes(rc.out_dir / "target_01_final.satn") ==
          read_bytes(rc2.out_dir / "target_01_final.satn"));
}

TEST_CASE("generate validation failures leave nothing behind") {
    RunConfig rc;
    rc.model.layers = 4;
    rc.model.heads = 2;
    rc.model.model_dim = 16;
    rc.model.text_len = 2;
    rc.model.grid = {2, 2};
    rc.sharing.lambda = 0.0f;
    rc.out_dir = temp_root() / "run_invalid";
    CHECK_THROWS_AS(run_generate(rc), ValidationError);
    CHECK(!fs::exists(rc.out_dir));

    rc.sharing.lambda = 1.1f;
    rc.sharing.layer_set = {7}; // outside [0,4)
    CHECK_THROWS_AS(run_generate(rc), ValidationError);
    CHECK(!fs::exists(rc.out_dir));
}

TEST_CASE("cache-ref round trip feeds generate") {
    // latent file from a quick vanilla run
    RunConfig rc;
    rc.model.layers = 4;
    rc.model.heads = 2;
    rc.model.model_dim = 16;
    rc.model.text_len = 2;
    rc.model.grid = {2, 2};
    rc.sampler.steps = 2;
    rc.sharing.mode = SharingMode::vanilla;
    rc.targets = 1;
    rc.seed = 5;
    rc.out_dir = temp_root() / "run_latent";
    run_generate(rc);

    CacheRefConfig cc;
    cc.model = rc.model;
    cc.latent_file = rc.out_dir / "ref_final.satn";
    cc.steps = 2;
    cc.layers = {2, 3};
    cc.seed = 9;
    cc.out_dir = temp_root() / "cache";
    run_cache_ref(cc);
    CHECK(fs::exists(cc.out_dir / "manifest.json"));

    size_t tensor_files = 0;
    for (const auto& e : fs::directory_iterator(cc.out_dir)) {
        if (e.path().extension() == ".satn") ++tensor_files;
    }
    CHECK(tensor_files == size_t(3) * 2 * 6); // (T+1) x |layers| x roles

    RunConfig shared = rc;
    shared.sharing.mode = SharingMode::selective;
    shared.sharing.layer_set = {2, 3};
    shared.ref_cache_dir = cc.out_dir;
    shared.out_dir = temp_root() / "run_cached";
    run_generate(shared);
    CHECK(fs::exists(shared.out_dir / "manifest.json"));
    CHECK(!fs::exists(shared.out_dir / "ref_trajectory.satn")); // external reference

    // mismatched step count is rejected
    shared.sampler.steps = 3;
    shared.out_dir = temp_root() / "run_cached_bad";
    CHECK_THROWS_AS(run_generate(shared), ConfigError);

    CacheRefConfig missing = cc;
    missing.latent_file = temp_root() / "nope.satn";
    missing.out_dir = temp_root() / "cache2";
    CHECK_THROWS_AS(run_cache_ref(missing), ValidationError);

    // rerun with the same flags: byte-identical cache
    CacheRefConfig again = cc;
    again.out_dir = temp_root() / "cache_again";
    run_cache_ref(again);
    CHECK(read_bytes(cc.out_dir / "manifest.json") == read_bytes(again.out_dir / "manifest.json"));
    CHECK(read_bytes(cc.out_dir / "t0000_l002_q_img.satn") ==
          read_bytes(again.out_dir / "t0000_l002_q_img.satn"));
}

TEST_CASE("analyze consumes a run directory") {
    RunConfig rc;
    rc.model.layers = 4;
    rc.model.heads = 2;
    rc.model.model_dim = 16;
    rc.model.text_len = 2;
    rc.model.grid = {2, 2};
    rc.sampler.steps = 2;
    rc.sharing.layer_set = {2, 3};
    rc.targets = 1;
    rc.seed = 6;
    rc.out_dir = temp_root() / "run_analyze";
    run_generate(rc);

    AnalyzeConfig ac;
    ac.run_dir = rc.out_dir;
    ac.trials = 8;
    run_analyze(ac);
    CHECK(fs::exists(rc.out_dir / "analysis" / "collision.json"));
    CHECK(fs::exists(rc.out_dir / "analysis" / "profile.csv"));
    CHECK(fs::exists(rc.out_dir / "analysis" / "summary.json"));

    AnalyzeConfig bad;
    bad.run_dir = temp_root() / "no_such_run";
    CHECK_THROWS_AS(run_analyze(bad), ValidationError);
}

TEST_CASE("analyze computes metrics over supplied embeddings") {
    const fs::path dir = temp_root() / "emb";
    fs::create_directories(dir);
    Matrix emb(3, 4, {1, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0, 0});
    write_matrix(dir / "emb.satn", emb);

    RunConfig rc;
    rc.model.layers = 4;
    rc.model.heads = 2;
    rc.model.model_dim = 16;
    rc.model.text_len = 2;
    rc.model.grid = {2, 2};
    rc.sampler.steps = 1;
    rc.sharing.mode = SharingMode::vanilla;
    rc.targets = 1;
    rc.out_dir = temp_root() / "run_emb";
    run_generate(rc);

    AnalyzeConfig ac;
    ac.run_dir = rc.out_dir;
    ac.trials = 2;
    ac.embedding_files = {dir / "emb.satn"};
    run_analyze(ac);
    std::ifstream pf(rc.out_dir / "analysis" / "pairs.csv");
    std::string header, row;
    std::getline(pf, header);
    CHECK(header == "i,j,cosine");
    int rows = 0;
    while (std::getline(pf, row)) {
        if (!row.empty()) ++rows;
    }
    CHECK(rows == 3);
}

TEST_CASE("ablate defaults carry the canonical lambda grid and single-group masks") {
    AblateConfig ac;
    CHECK(ac.lambdas == std::vector<float>{0.9f, 0.95f, 1.0f, 1.05f, 1.1f, 1.15f});
    CHECK(ac.group_masks == std::vector<std::string>{"100", "010", "001"});
}

TEST_CASE("ablate emits the full grid") {
    AblateConfig ac;
    ac.model.layers = 6;
    ac.model.heads = 2;
    ac.model.model_dim = 16;
    ac.model.text_len = 2;
    ac.model.grid = {2, 2};
    ac.sampler.steps = 1;
    ac.targets = 2;
    ac.out_csv = temp_root() / "ablate.csv";
    run_ablate(ac);

    std::ifstream f(ac.out_csv);
    std::string line;
    int rows = 0;
    std::getline(f, line); // header
    while (std::getline(f, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 18);

    AblateConfig empty = ac;
    empty.lambdas = {};
    CHECK_THROWS_AS(run_ablate(empty), ValidationError);

    // idempotent: rerun yields byte-identical csv
    AblateConfig again = ac;
    again.out_csv = temp_root() / "ablate_again.csv";
    run_ablate(again);
    CHECK(read_bytes(ac.out_csv) == read_bytes(again.out_csv));
}

TEST_CASE("analyze is idempotent") {
    RunConfig rc;
    rc.model.layers = 4;
    rc.model.heads = 2;
    rc.model.model_dim = 16;
    rc.model.text_len = 2;
    rc.model.grid = {2, 2};
    rc.sampler.steps = 1;
    rc.sharing.layer_set = {2, 3};
    rc.targets = 1;
    rc.out_dir = temp_root() / "run_idem";
    run_generate(rc);

    AnalyzeConfig ac;
    ac.run_dir = rc.out_dir;
    ac.trials = 4;
    run_analyze(ac);
    auto first = read_bytes(rc.out_dir / "analysis" / "summary.json");
    auto first_csv = read_bytes(rc.out_dir / "analysis" / "profile.csv");
    run_analyze(ac);
    CHECK(read_bytes(rc.out_dir / "analysis" / "summary.json") == first);
    CHECK(read_bytes(rc.out_dir / "analysis" / "profile.csv") == first_csv);
}

// ---- process-level checks against the real binary ----------------------

TEST_CASE("cli: generate is deterministic and validates flags") {
    const fs::path out1 = temp_root() / "cli_run1";
    const fs::path out2 = temp_root() / "cli_run2";
    const std::string base = "generate " + model_flags() +
                             " --steps 2 --layers 2..4 --seed 7 --mode selective --out ";
    REQUIRE(run_cli(base + out1.string()) == 0);
    REQUIRE(run_cli(base + out2.string()) == 0);
    CHECK(read_bytes(out1 / "manifest.json") == read_bytes(out2 / "manifest.json"));

    CHECK(run_cli("generate " + model_flags() + " --lambda 0 --out " +
                  (temp_root() / "cli_bad").string()) == 2);
    CHECK(run_cli("generate --out " + (temp_root() / "cli_bad2").string() +
                  " --mode nonsense") == 2);
    CHECK(!fs::exists(temp_root() / "cli_bad"));
}

TEST_CASE("cli: paper-preset flags parse against a deep model") {
    const fs::path out = temp_root() / "cli_preset";
    const int rc = run_cli(
        "generate --model-layers 57 --heads 1 --dim 8 --text-len 1 --grid-h 2 --grid-w 2 "
        "--steps 1 --targets 1 --lambda 1.1 --layers 19..57 --out " +
        out.string());
    CHECK(rc == 0);
    CHECK(fs::exists(out / "manifest.json"));
}

TEST_CASE("cli: cache-ref reports missing latent with a diagnostic exit") {
    CHECK(run_cli("cache-ref " + model_flags() + " --latent /does/not/exist.satn --out " +
                  (temp_root() / "cli_cache").string()) == 2);
}

TEST_CASE("cli: analyze on a missing run directory exits with validation code") {
    CHECK(run_cli("analyze --run " + (temp_root() / "missing_run").string()) == 2);
}

TEST_CASE("cli: ablate writes the csv") {
    const fs::path csv = temp_root() / "cli_ablate.csv";
    REQUIRE(run_cli("ablate --steps 1 --out " + csv.string()) == 0);
    std::ifstream f(csv);
    std::string header;
    std::getline(f, header);
    CHECK(header.rfind("lambda,", 0) == 0);
}

TEST_CASE("cli: selftest passes on a pristine build") {
    CHECK(run_cli("selftest") == 0);
}

TEST_CASE("cli: config file values are overridden by flags") {
    const fs::path cfg_file = temp_root() / "run.cfg";
    {
        std::ofstream f(cfg_file);
        f << "steps=2\n";
        f << "seed=5\n";
        f << "mode=vanilla\n";
    }
    const fs::path out1 = temp_root() / "cli_cfg1";
    REQUIRE(run_cli("generate " + model_flags() + " --config " + cfg_file.string() +
                    " --targets 1 --out " + out1.string()) == 0);
    std::ifstream mf(out1 / "manifest.json");
    std::stringstream ss;
    ss << mf.rdbuf();
    CHECK(ss.str().find("\"mode\": \"vanilla\"") != std::string::npos);

    const fs::path out2 = temp_root() / "cli_cfg2";
    REQUIRE(run_cli("generate " + model_flags() + " --config " + cfg_file.string() +
                    " --targets 1 --mode selective --layers 2..4 --out " + out2.string()) == 0);
    std::ifstream mf2(out2 / "manifest.json");
    std::stringstream ss2;
    ss2 << mf2.rdbuf();
    CHECK(ss2.str().find("\"mode\": \"selective\"") != std::string::npos);
}
