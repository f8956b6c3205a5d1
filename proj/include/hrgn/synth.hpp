#pragma once

// Deterministic synthetic stream-reservoir benchmark. First-order
// relaxation toward air temperature, upstream mixing along the channel,
// and cold-water reservoir releases provide the causal structure:
// weather -> temperature, releases -> summer cooling, network -> advection.
// "Simulation" labels rerun the physics with reservoirs removed plus a
// warm bias, standing in for an uncalibrated reservoir-blind simulator.

#include <hrgn/dataio.hpp>
#include <hrgn/graph.hpp>
#include <hrgn/observations.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrgn {

struct SynthConfig {
    int n_segments = 8;
    int n_reservoirs = 2;
    int days = 1460;
    std::uint64_t seed = 0;

    double air_mean_c = 10.0;
    double air_amplitude_c = 12.0;
    double air_noise_c = 1.0;
    double mixing_fraction = 0.25;       // mu, in [0, 0.4]
    double hypolimnion_c = 7.0;          // temperature of released water
    double release_scale_m3 = 150.0;     // volume giving full mixing weight
    double obs_fraction = 1.0;
    double obs_noise_c = 0.3;
    double sim_bias_c = 1.0;             // warm offset of the simulation labels

    void validate() const {
        if (n_segments < 2) throw std::invalid_argument("need at least 2 segments");
        if (n_reservoirs < 0 || n_reservoirs > n_segments / 2)
            throw std::invalid_argument("reservoir count out of range");
        if (days < 730) throw std::invalid_argument("need at least two seasonal cycles (730 days)");
        if (mixing_fraction < 0.0 || mixing_fraction > 0.4)
            throw std::invalid_argument("mixing fraction outside [0, 0.4]");
        if (obs_fraction <= 0.0 || obs_fraction > 1.0)
            throw std::invalid_argument("observation fraction outside (0, 1]");
    }
};

struct SynthDataset {
    HeteroGraph graph;
    long day0 = 0;
    int days = 0;

    std::vector<int> downstream;               // per segment, -1 at the outlet
    std::vector<double> length_m;              // per segment
    std::vector<int> reservoir_outlet;         // per reservoir, segment fed by it
    std::vector<int> reservoir_inflow;         // per reservoir, segment feeding it

    std::vector<std::vector<Vector>> drivers;  // [t][segment], raw (unstandardized)
    std::vector<std::vector<Vector>> releases; // [t][reservoir], 3 types, m3
    std::vector<Vector> meta;                  // [reservoir], 5 features

    std::vector<std::vector<double>> truth;    // [t][segment], degC
    std::vector<std::vector<double>> sim;      // [t][segment], degC
    ObservationSet observations;
};

namespace detail {

// Truth recurrence; rho_override = nullptr uses the configured releases.
inline std::vector<std::vector<double>> run_physics(
    const SynthConfig& cfg, const SynthDataset& d,
    const std::vector<std::vector<double>>& air, bool with_releases) {
    const int N = cfg.n_segments;
    std::vector<std::vector<double>> temp(cfg.days, std::vector<double>(N, 10.0));
    std::vector<double> kappa(N);
    // Per-segment relaxation rate, deterministic from topology position.
    for (int i = 0; i < N; ++i) kappa[i] = 0.1 + 0.4 * ((i * 7) % N) / std::max(1, N - 1);

    std::vector<std::vector<int>> parents(N);
    for (int i = 0; i < N; ++i)
        if (d.downstream[i] >= 0) parents[d.downstream[i]].push_back(i);
    std::vector<int> below_reservoir(N, -1);
    for (int k = 0; k < cfg.n_reservoirs; ++k) below_reservoir[d.reservoir_outlet[k]] = k;

    for (int t = 0; t + 1 < cfg.days; ++t) {
        for (int i = 0; i < N; ++i) {
            double next = temp[t][i] + kappa[i] * (air[t][i] - temp[t][i]);
            if (!parents[i].empty()) {
                double up = 0.0;
                for (int j : parents[i]) up += temp[t][j];
                up /= static_cast<double>(parents[i].size());
                next += cfg.mixing_fraction * (up - temp[t][i]);
            }
            if (with_releases && below_reservoir[i] >= 0) {
                const int k = below_reservoir[i];
                const double vol = d.releases[t][k].sum();
                const double rho = std::min(0.85, vol / cfg.release_scale_m3);
                next += rho * (cfg.hypolimnion_c - temp[t][i]);
            }
            temp[t + 1][i] = std::min(35.0, std::max(0.0, next));
        }
    }
    return temp;
}

}  // namespace detail

// Uniform subsample without replacement; exact count, deterministic per seed.
inline ObservationSet sparsify(const ObservationSet& obs, double fraction,
                               std::uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0)
        throw std::invalid_argument("sparsify: fraction outside (0, 1]");
    std::vector<std::size_t> idx(obs.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t keep = static_cast<std::size_t>(std::llround(fraction * obs.size()));
    ObservationSet out;
    for (std::size_t i = 0; i < keep && i < idx.size(); ++i)
        out.records.push_back(obs.records[idx[i]]);
    out.finalize();
    return out;
}

inline SynthDataset generate(const SynthConfig& cfg) {
    cfg.validate();
    std::mt19937_64 rng(cfg.seed);
    const int N = cfg.n_segments;
    const int M = cfg.n_reservoirs;
    const double two_pi = 2.0 * std::numbers::pi;

    SynthDataset d;
    d.day0 = days_from_civil(2000, 1, 1);
    d.days = cfg.days;

    // River tree: every segment drains to a nearby higher-indexed one;
    // segment N-1 is the basin outlet.
    d.downstream.assign(N, -1);
    std::uniform_int_distribution<int> hop(1, 3);
    for (int i = 0; i < N - 1; ++i) d.downstream[i] = std::min(N - 1, i + hop(rng));

    std::uniform_real_distribution<double> len(2000.0, 20000.0);
    d.length_m.resize(N);
    for (int i = 0; i < N; ++i) d.length_m[i] = len(rng);

    // Reservoirs sit on tree edges spread across the network: inflow from
    // the edge's upstream segment, release into its downstream segment.
    d.reservoir_inflow.resize(M);
    d.reservoir_outlet.resize(M);
    for (int k = 0; k < M; ++k) {
        const int a = (k * (N - 1)) / std::max(1, M);  // distinct upstream segments
        d.reservoir_inflow[k] = a;
        d.reservoir_outlet[k] = d.downstream[a];
    }

    for (int i = 0; i < N; ++i) d.graph.segment_ids.push_back("seg" + std::to_string(i));
    for (int k = 0; k < M; ++k) d.graph.reservoir_ids.push_back("res" + std::to_string(k));
    d.graph.index_nodes();

    // ss edges: transitive closure along the drainage path, outlet-to-outlet
    // channel distance.
    for (int i = 0; i < N; ++i) {
        double dist = 0.0;
        for (int j = d.downstream[i]; j >= 0; j = d.downstream[j]) {
            dist += d.length_m[j];
            d.graph.edges.push_back({d.graph.segment_ids[i], d.graph.segment_ids[j],
                                     EdgeType::SegSeg, dist, 0.0});
        }
    }
    for (int k = 0; k < M; ++k) {
        const int a = d.reservoir_inflow[k];
        const int b = d.reservoir_outlet[k];
        d.graph.edges.push_back({d.graph.segment_ids[a], d.graph.reservoir_ids[k],
                                 EdgeType::SegRes, 0.25 * d.length_m[b], 0.0});
        d.graph.edges.push_back({d.graph.reservoir_ids[k], d.graph.segment_ids[b],
                                 EdgeType::ResSeg, 0.75 * d.length_m[b], 0.0});
    }
    build_adjacency(d.graph);

    // Reservoir meta-features: dam height/length, depth, elevation, catchment.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    d.meta.resize(M);
    for (int k = 0; k < M; ++k) {
        Vector l(5);
        l << 30.0 + 60.0 * unit(rng), 200.0 + 600.0 * unit(rng), 15.0 + 30.0 * unit(rng),
            200.0 + 400.0 * unit(rng), 50.0 + 250.0 * unit(rng);
        d.meta[k] = l;
    }

    // Releases: steady conservation flow plus multi-day direct-release
    // episodes with random onsets (frequent, but not fixed, in summer) and
    // occasional spills. The random episode timing keeps the release series
    // informative beyond what the seasonal drivers already reveal, which is
    // what the release-hiding experiments rely on.
    std::normal_distribution<double> gauss(0.0, 1.0);
    d.releases.assign(cfg.days, std::vector<Vector>(M, Vector::Zero(3)));
    std::uniform_int_distribution<int> episode_len(5, 15);
    for (int k = 0; k < M; ++k) {
        int remaining = 0;
        double level = 0.0;
        for (int t = 0; t < cfg.days; ++t) {
            const int doy = t % 365;
            const bool summer = doy >= 135 && doy <= 245;
            if (remaining == 0 && unit(rng) < (summer ? 0.12 : 0.03)) {
                remaining = episode_len(rng);
                level = std::max(60.0, 130.0 + 25.0 * gauss(rng));
            }
            Vector r(3);
            r[0] = std::max(0.0, 20.0 + 5.0 * gauss(rng));
            if (remaining > 0) {
                r[1] = std::max(0.0, level + 10.0 * gauss(rng));
                --remaining;
            } else {
                r[1] = std::max(0.0, 4.0 + 2.0 * gauss(rng));
            }
            r[2] = unit(rng) < 0.1 ? std::abs(30.0 * gauss(rng)) : 0.0;
            d.releases[t][k] = r;
        }
    }

    // Drivers: climate (air temp, precipitation, solar, day-of-year pair,
    // PET) plus static geometry.
    std::vector<std::vector<double>> air(cfg.days, std::vector<double>(N, 0.0));
    std::vector<double> elev(N), slope(N), width(N);
    for (int i = 0; i < N; ++i) {
        elev[i] = 100.0 + 500.0 * unit(rng);
        slope[i] = 0.001 + 0.02 * unit(rng);
        width[i] = 5.0 + 30.0 * unit(rng);
    }
    d.drivers.assign(cfg.days, std::vector<Vector>(N, Vector::Zero(10)));
    for (int t = 0; t < cfg.days; ++t) {
        const int doy = t % 365;
        const double season = std::sin(two_pi * (doy - 110) / 365.0);
        for (int i = 0; i < N; ++i) {
            const double a = cfg.air_mean_c + cfg.air_amplitude_c * season -
                             0.004 * (elev[i] - 350.0) + cfg.air_noise_c * gauss(rng);
            air[t][i] = a;
            Vector x(10);
            x[0] = a;
            x[1] = std::max(0.0, 2.0 + 2.0 * gauss(rng));
            x[2] = 200.0 + 150.0 * season + 20.0 * gauss(rng);
            x[3] = std::sin(two_pi * doy / 365.0);
            x[4] = std::cos(two_pi * doy / 365.0);
            x[5] = 1.0 + 0.05 * std::max(0.0, a) + 0.1 * gauss(rng);
            x[6] = elev[i];
            x[7] = d.length_m[i];
            x[8] = slope[i];
            x[9] = width[i];
            d.drivers[t][i] = x;
        }
    }

    d.truth = detail::run_physics(cfg, d, air, /*with_releases=*/true);
    const auto no_res = detail::run_physics(cfg, d, air, /*with_releases=*/false);
    d.sim.assign(cfg.days, std::vector<double>(N));
    for (int t = 0; t < cfg.days; ++t)
        for (int i = 0; i < N; ++i) d.sim[t][i] = no_res[t][i] + cfg.sim_bias_c;

    // The release signal must be big enough for the hiding experiments to
    // have a margin: summer truth below a reservoir must be at least 1 degC
    // colder than its no-reservoir counterfactual.
    for (int k = 0; k < M; ++k) {
        const int i = d.reservoir_outlet[k];
        double gap = 0.0;
        int count = 0;
        for (int t = 0; t < cfg.days; ++t) {
            const int doy = t % 365;
            if (doy >= 152 && doy <= 243) {  // June-August
                gap += no_res[t][i] - d.truth[t][i];
                ++count;
            }
        }
        if (gap / count < 1.0)
            throw std::runtime_error("synthetic generator: reservoir cooling signal below 1 degC "
                                     "for segment " + d.graph.segment_ids[i]);
    }

    // Observations: noisy subsample of truth.
    ObservationSet dense;
    std::normal_distribution<double> obs_noise(0.0, cfg.obs_noise_c);
    std::mt19937_64 obs_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < cfg.days; ++t)
            dense.add(i, t, d.truth[t][i] + obs_noise(obs_rng));
    dense.finalize();
    d.observations = dense;  // fraction applied below if < 1

    if (cfg.obs_fraction < 1.0)
        d.observations = sparsify(dense, cfg.obs_fraction, cfg.seed ^ 0x51ce5e1ed1e5ULL);
    return d;
}


// --- CSV emission (schemas in dataio.hpp) ---

namespace detail {
inline std::FILE* open_out(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}
}  // namespace detail

inline void write_dataset(const SynthDataset& d, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const int N = d.graph.n_segments();
    const int M = d.graph.n_reservoirs();

    std::FILE* f = detail::open_out(dir + "/edges.csv");
    std::fprintf(f, "from_id,to_id,edge_type,stream_distance_m\n");
    for (const Edge& e : d.graph.edges)
        std::fprintf(f, "%s,%s,%s,%.6f\n", e.from.c_str(), e.to.c_str(),
                     edge_type_name(e.type), e.distance_m);
    std::fclose(f);

    f = detail::open_out(dir + "/drivers.csv");
    std::fprintf(f, "segment_id,date");
    for (int i = 0; i < 10; ++i) std::fprintf(f, ",f%d", i);
    std::fprintf(f, "\n");
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < d.days; ++t) {
            std::fprintf(f, "%s,%s", d.graph.segment_ids[i].c_str(),
                         format_date(d.day0 + t).c_str());
            for (int c = 0; c < 10; ++c) std::fprintf(f, ",%.6f", d.drivers[t][i][c]);
            std::fprintf(f, "\n");
        }
    std::fclose(f);

    f = detail::open_out(dir + "/releases.csv");
    std::fprintf(f, "reservoir_id,date,conservation_m3,direct_m3,spill_m3\n");
    for (int k = 0; k < M; ++k)
        for (int t = 0; t < d.days; ++t)
            std::fprintf(f, "%s,%s,%.6f,%.6f,%.6f\n", d.graph.reservoir_ids[k].c_str(),
                         format_date(d.day0 + t).c_str(), d.releases[t][k][0],
                         d.releases[t][k][1], d.releases[t][k][2]);
    std::fclose(f);

    f = detail::open_out(dir + "/reservoirs.csv");
    std::fprintf(f, "reservoir_id,dam_height_m,dam_length_m,depth_m,elevation_m,catchment_km2\n");
    for (int k = 0; k < M; ++k)
        std::fprintf(f, "%s,%.6f,%.6f,%.6f,%.6f,%.6f\n", d.graph.reservoir_ids[k].c_str(),
                     d.meta[k][0], d.meta[k][1], d.meta[k][2], d.meta[k][3], d.meta[k][4]);
    std::fclose(f);

    const auto write_obs = [&](const std::string& path, const ObservationSet& obs) {
        std::FILE* g = detail::open_out(path);
        std::fprintf(g, "segment_id,date,temp_c\n");
        for (const auto& r : obs.records)
            std::fprintf(g, "%s,%s,%.6f\n", d.graph.segment_ids[r.segment].c_str(),
                         format_date(d.day0 + r.t).c_str(), r.y);
        std::fclose(g);
    };
    write_obs(dir + "/observations.csv", d.observations);

    ObservationSet truth, sim;
    for (int i = 0; i < N; ++i)
        for (int t = 0; t < d.days; ++t) {
            truth.add(i, t, d.truth[t][i]);
            sim.add(i, t, d.sim[t][i]);
        }
    truth.finalize();
    sim.finalize();
    write_obs(dir + "/truth.csv", truth);
    write_obs(dir + "/simulation.csv", sim);
}

}  // namespace hrgn
