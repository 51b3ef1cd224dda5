#include "sattn/analysis.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <thread>

namespace sattn {

using nlohmann::json;

LocalityProfile locality_profile(std::span<const float> ref_key_weights, GridPos query,
                                 Grid grid) {
    if (grid.h == 0 || grid.w == 0) {
        throw ValidationError("locality_profile: zero-sized grid");
    }
    if (ref_key_weights.size() != grid.tokens()) {
        throw ShapeError("locality_profile: weight count != grid tokens");
    }
    LocalityProfile p;
    p.query = query;
    p.mass.assign(size_t(grid.h - 1) + (grid.w - 1) + 1, 0.0);
    size_t idx = 0;
    for (uint32_t i = 0; i < grid.h; ++i) {
        for (uint32_t j = 0; j < grid.w; ++j, ++idx) {
            const uint32_t d = uint32_t(std::abs(int64_t(i) - int64_t(query.i)) +
                                        std::abs(int64_t(j) - int64_t(query.j)));
            p.mass[d] += double(ref_key_weights[idx]);
            p.ref_mass_total += double(ref_key_weights[idx]);
        }
    }
    return p;
}

AggregateProfile aggregate_profile(const Matrix& probe_weights, uint32_t text_len, Grid grid) {
    const uint32_t n = grid.tokens();
    if (probe_weights.cols < n || probe_weights.rows != text_len + n) {
        throw ShapeError("aggregate_profile: probe matrix does not cover M+N queries / N ref keys");
    }
    const uint32_t ref_begin = probe_weights.cols - n;
    AggregateProfile agg;
    agg.mean_mass.assign(size_t(grid.h - 1) + (grid.w - 1) + 1, 0.0);
    double weighted_dist = 0.0;
    for (uint32_t q = 0; q < n; ++q) {
        const GridPos query{q / grid.w, q % grid.w};
        auto row = probe_weights.row(text_len + q);
        LocalityProfile p = locality_profile(row.subspan(ref_begin, n), query, grid);
        for (size_t b = 0; b < p.mass.size(); ++b) {
            agg.mean_mass[b] += p.mass[b];
            weighted_dist += double(b) * p.mass[b];
        }
        agg.ref_mass_total += p.ref_mass_total;
        double row_sum = 0.0;
        for (float v : row) row_sum += double(v);
        agg.full_row_total += row_sum;
    }
    for (double& m : agg.mean_mass) m /= n;
    agg.mean_l1_distance = agg.ref_mass_total > 0.0 ? weighted_dist / agg.ref_mass_total : 0.0;
    agg.ref_mass_total /= n;
    agg.full_row_total /= n;
    return agg;
}

uint32_t thread_budget(uint32_t requested) {
    uint32_t n = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("SHARED_ATTN_THREADS")) {
        char* end = nullptr;
        unsigned long cap = std::strtoul(env, &end, 10);
        if (end != env && cap >= 1) n = std::min<uint32_t>(n, uint32_t(cap));
    }
    return n;
}

namespace {

// log C(n,k) via lgamma
double log_choose(uint32_t n, uint32_t k) {
    return std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
           std::lgamma(double(n - k) + 1.0);
}

// one-sided sign test: P[X >= wins], X ~ Binomial(n, 1/2)
double sign_test_p_value(uint32_t wins, uint32_t n) {
    double p = 0.0;
    const double log_half_n = -double(n) * std::log(2.0);
    for (uint32_t i = wins; i <= n; ++i) {
        p += std::exp(log_choose(n, i) + log_half_n);
    }
    return std::min(p, 1.0);
}

struct TrialResult {
    double d0_identity = 0.0;
    double d0_shifted = 0.0;
    double min_spread = 0.0;
};

TrialResult run_trial(const CollisionConfig& cfg, uint32_t trial) {
    const Grid grid = cfg.grid;
    const uint32_t n = grid.tokens();
    const RopeParams rope = RopeParams::even_split(cfg.head_dim);

    Matrix content(n, cfg.head_dim);
    SeededRng rng(cfg.seed, 1000 + trial);
    fill_gaussian(content, rng);

    const auto identity_pos = image_grid_positions(grid, ShiftMode::identity());
    const auto shifted_pos = image_grid_positions(grid, ShiftMode::shift_by(grid.w));
    const Matrix q_rot = rope_rotate(content, identity_pos, rope);

    auto mode_masses = [&](const std::vector<GridPos>& key_pos, bool track_spread,
                           double& min_spread) {
        Matrix k_rot = rope_rotate(content, key_pos, rope);
        Matrix logits = matmul(q_rot, transpose(k_rot));
        Matrix weights = row_softmax(logits, std::sqrt(float(cfg.head_dim)));
        double d0_sum = 0.0;
        for (uint32_t q = 0; q < n; ++q) {
            const GridPos query{q / grid.w, q % grid.w};
            LocalityProfile p = locality_profile(weights.row(q), query, grid);
            d0_sum += p.mass[0];
            if (track_spread) {
                min_spread = std::min(min_spread, p.ref_mass_total - p.mass[0]);
            }
        }
        return d0_sum / n;
    };

    TrialResult r;
    double unused = 0.0;
    r.min_spread = std::numeric_limits<double>::infinity();
    r.d0_identity = mode_masses(identity_pos, false, unused);
    r.d0_shifted = mode_masses(shifted_pos, true, r.min_spread);
    return r;
}

} // namespace

CollisionSummary collision_experiment(const CollisionConfig& cfg) {
    if (cfg.trials < 1) {
        throw ValidationError("collision_experiment: trials must be >= 1");
    }
    CollisionSummary s;
    s.config = cfg;
    s.d0_identity.resize(cfg.trials);
    s.d0_shifted.resize(cfg.trials);
    std::vector<double> spreads(cfg.trials);

    const uint32_t workers = std::min(thread_budget(cfg.threads), cfg.trials);
    auto worker = [&](uint32_t begin, uint32_t end) {
        for (uint32_t t = begin; t < end; ++t) {
            TrialResult r = run_trial(cfg, t);
            s.d0_identity[t] = r.d0_identity;
            s.d0_shifted[t] = r.d0_shifted;
            spreads[t] = r.min_spread;
        }
    };
    if (workers <= 1) {
        worker(0, cfg.trials);
    } else {
        std::vector<std::thread> pool;
        const uint32_t chunk = (cfg.trials + workers - 1) / workers;
        for (uint32_t w = 0; w < workers; ++w) {
            const uint32_t b = w * chunk;
            const uint32_t e = std::min(cfg.trials, b + chunk);
            if (b < e) pool.emplace_back(worker, b, e);
        }
        for (auto& th : pool) th.join();
    }

    s.min_spread_mass = std::numeric_limits<double>::infinity();
    for (uint32_t t = 0; t < cfg.trials; ++t) {
        s.mean_d0_identity += s.d0_identity[t];
        s.mean_d0_shifted += s.d0_shifted[t];
        if (s.d0_identity[t] > s.d0_shifted[t]) ++s.identity_wins;
        s.min_spread_mass = std::min(s.min_spread_mass, spreads[t]);
    }
    s.mean_d0_identity /= cfg.trials;
    s.mean_d0_shifted /= cfg.trials;
    s.sign_test_p = sign_test_p_value(s.identity_wins, cfg.trials);
    return s;
}

MetricReport pairwise_cosine(const std::vector<std::vector<float>>& embeddings) {
    if (embeddings.size() < 2) {
        throw ValidationError("pairwise_cosine: need at least 2 embeddings");
    }
    const size_t dim = embeddings.front().size();
    std::vector<double> norms(embeddings.size());
    for (size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].size() != dim) {
            throw ShapeError("pairwise_cosine: embedding dims differ");
        }
        double sq = 0.0;
        for (float v : embeddings[i]) sq += double(v) * v;
        norms[i] = std::sqrt(sq);
        if (!(norms[i] > 0.0)) {
            throw ValidationError("pairwise_cosine: zero-norm embedding at index " +
                                  std::to_string(i));
        }
    }
    MetricReport report;
    double sum = 0.0;
    for (size_t i = 0; i < embeddings.size(); ++i) {
        for (size_t j = i + 1; j < embeddings.size(); ++j) {
            double dot = 0.0;
            for (size_t c = 0; c < dim; ++c) {
                dot += double(embeddings[i][c]) * double(embeddings[j][c]);
            }
            const double cosv = dot / (norms[i] * norms[j]);
            report.pairs.push_back({uint32_t(i), uint32_t(j), cosv});
            sum += cosv;
        }
    }
    report.count = uint32_t(report.pairs.size());
    report.mean = sum / report.count;
    return report;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write: " + path.string());
    return f;
}

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

} // namespace

void write_profile_csv(const std::filesystem::path& path, const AggregateProfile& profile) {
    auto f = open_out(path);
    f << "distance,mass\n";
    for (size_t d = 0; d < profile.mean_mass.size(); ++d) {
        f << d << "," << fmt(profile.mean_mass[d]) << "\n";
    }
}

void write_pairs_csv(const std::filesystem::path& path, const MetricReport& report) {
    auto f = open_out(path);
    f << "i,j,cosine\n";
    for (const PairCosine& p : report.pairs) {
        f << p.i << "," << p.j << "," << fmt(p.cosine) << "\n";
    }
}

void write_collision_json(const std::filesystem::path& path, const CollisionSummary& s) {
    json j;
    j["grid"] = {{"h", s.config.grid.h}, {"w", s.config.grid.w}};
    j["head_dim"] = s.config.head_dim;
    j["trials"] = s.config.trials;
    j["seed"] = s.config.seed;
    j["mean_d0_identity"] = s.mean_d0_identity;
    j["mean_d0_shifted"] = s.mean_d0_shifted;
    j["identity_wins"] = s.identity_wins;
    j["sign_test_p"] = s.sign_test_p;
    j["min_spread_mass"] = s.min_spread_mass;
    auto f = open_out(path);
    f << j.dump(2) << "\n";
}

} // namespace sattn
