#include <catch2/catch_amalgamated.hpp>

#include <hrgn/enkf.hpp>
#include <hrgn/synth.hpp>

#include "test_util.hpp"

#include <random>

using namespace hrgn;

namespace {

std::vector<Vector> scalar_states(const std::vector<double>& vals) {
    std::vector<Vector> out;
    for (double v : vals) {
        Vector s(1);
        s[0] = v;
        out.push_back(s);
    }
    return out;
}

}  // namespace

TEST_CASE("EnKF config validation") {
    EnkfConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.ensemble_size = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = EnkfConfig{};
    cfg.obs_noise = 0.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = EnkfConfig{};
    cfg.proc_noise = -1.0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("huge observation noise makes the update vanish") {
    std::mt19937_64 rng(1);
    std::vector<double> preds = {1.0, 2.0, 3.0, 4.0};
    auto states = scalar_states(preds);
    auto before = states;
    EnkfConfig cfg;
    cfg.ensemble_size = 4;
    cfg.obs_noise = 1e9;
    enkf_adjust(states, preds, 10.0, cfg, rng);
    for (int e = 0; e < 4; ++e)
        CHECK(std::abs(states[e][0] - before[e][0]) < 1e-6);
}

TEST_CASE("zero prediction spread gives a zero gain and leaves states untouched") {
    std::mt19937_64 rng(2);
    std::vector<double> preds = {2.5, 2.5, 2.5, 2.5};
    auto states = scalar_states({0.1, 0.4, -0.3, 0.8});
    auto before = states;
    EnkfConfig cfg;
    cfg.ensemble_size = 4;
    enkf_adjust(states, preds, 5.0, cfg, rng);
    for (int e = 0; e < 4; ++e) CHECK(states[e][0] == before[e][0]);
}

TEST_CASE("scalar identity observation recovers the Kalman posterior") {
    // State x with prior N(m, s2), observation y = x + noise, R = r2. The
    // exact posterior mean is m + K (y - m) with K = s2 / (s2 + r2). With a
    // large stochastic ensemble the updated ensemble matches it closely.
    const double m0 = 1.0, s2 = 4.0, r2 = 1.0, y_obs = 5.0;
    const double K = s2 / (s2 + r2);
    const double post_mean = m0 + K * (y_obs - m0);
    const double post_var = (1.0 - K) * s2;

    const int E = 4000;
    std::mt19937_64 rng(3);
    std::normal_distribution<double> prior(m0, std::sqrt(s2));
    std::vector<double> vals(E);
    for (auto& v : vals) v = prior(rng);
    auto states = scalar_states(vals);
    std::vector<double> preds = vals;  // identity observation operator

    EnkfConfig cfg;
    cfg.ensemble_size = E;
    cfg.obs_noise = std::sqrt(r2);
    enkf_adjust(states, preds, y_obs, cfg, rng);

    double mean = 0.0;
    for (const auto& s : states) mean += s[0];
    mean /= E;
    double var = 0.0;
    for (const auto& s : states) var += (s[0] - mean) * (s[0] - mean);
    var /= (E - 1);

    CHECK(mean == Catch::Approx(post_mean).margin(0.15));
    CHECK(var == Catch::Approx(post_var).margin(0.15));
}

TEST_CASE("gain moves every member toward the observation in proportion to covariance") {
    // Two-dimensional state; only the first coordinate correlates with the
    // prediction, so the second coordinate must stay almost untouched.
    const int E = 2000;
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<Vector> states(E);
    std::vector<double> preds(E);
    for (int e = 0; e < E; ++e) {
        states[e] = Vector(2);
        states[e][0] = n01(rng);
        states[e][1] = n01(rng);  // independent of the prediction
        preds[e] = states[e][0];
    }
    EnkfConfig cfg;
    cfg.ensemble_size = E;
    cfg.obs_noise = 1.0;
    auto before = states;
    enkf_adjust(states, preds, 2.0, cfg, rng);

    double shift0 = 0.0, shift1 = 0.0;
    for (int e = 0; e < E; ++e) {
        shift0 += states[e][0] - before[e][0];
        shift1 += states[e][1] - before[e][1];
    }
    shift0 /= E;
    shift1 /= E;
    CHECK(shift0 == Catch::Approx(0.5 * 2.0).margin(0.15));  // K ~ 1/(1+1), innovation ~ 2
    CHECK(std::abs(shift1) < 0.1);
}

namespace {
struct EnkfFixture {
    SynthDataset data;
    ModelConfig cfg;
    ParameterStore store;
    NeighborIndex nbr;
    SequenceInputs in;
};

EnkfFixture make_enkf_fixture(std::uint64_t seed, int T) {
    EnkfFixture f;
    f.data = generate(testutil::fixture_config(seed));
    f.cfg.hidden = 6;
    f.cfg.drivers = 10;
    f.cfg.release_dim = 3;
    f.cfg.coupling_layers = 1;
    register_model(f.store, f.cfg, seed + 60);
    f.nbr = neighbor_index(f.data.graph);
    for (int t = 0; t < T; ++t) {
        f.in.x.push_back(f.data.drivers[t]);
        f.in.r.push_back(f.data.releases[t]);
    }
    f.in.l = f.data.meta;
    for (auto& row : f.in.x)
        for (auto& v : row) v = (v.array() / 100.0).matrix();
    for (auto& row : f.in.r)
        for (auto& v : row) v = (v.array() / 100.0).matrix();
    for (auto& v : f.in.l) v = (v.array() / 100.0).matrix();
    return f;
}
}  // namespace

TEST_CASE("EnKF rollout is deterministic for a fixed seed") {
    EnkfFixture f = make_enkf_fixture(30, 8);
    ModelVars m = model_vars(f.store, f.cfg);
    ObservationSet obs;
    obs.add(1, 3, 0.5);
    obs.add(4, 5, -0.2);
    obs.finalize();
    EnkfConfig cfg;
    cfg.ensemble_size = 8;
    cfg.seed = 123;

    EnkfRollout a = rollout_enkf(f.data.graph, f.nbr, m, f.in, obs, UpdatePolicy{1}, cfg);
    EnkfRollout b = rollout_enkf(f.data.graph, f.nbr, m, f.in, obs, UpdatePolicy{1}, cfg);
    CHECK(a.y_mean == b.y_mean);

    cfg.seed = 124;
    EnkfRollout c = rollout_enkf(f.data.graph, f.nbr, m, f.in, obs, UpdatePolicy{1}, cfg);
    CHECK(a.y_mean != c.y_mean);
}

TEST_CASE("EnKF rollout is strictly causal") {
    EnkfFixture f = make_enkf_fixture(31, 10);
    ModelVars m = model_vars(f.store, f.cfg);
    EnkfConfig cfg;
    cfg.ensemble_size = 6;
    cfg.seed = 7;

    ObservationSet none;
    ObservationSet one;
    one.add(2, 5, 1.0);
    one.finalize();

    EnkfRollout base = rollout_enkf(f.data.graph, f.nbr, m, f.in, none, UpdatePolicy{1}, cfg);
    EnkfRollout adj = rollout_enkf(f.data.graph, f.nbr, m, f.in, one, UpdatePolicy{1}, cfg);

    // Predictions through t=5 were recorded before the t=5 update fired.
    for (int t = 0; t <= 5; ++t) CHECK(base.y_mean[t] == adj.y_mean[t]);
    CHECK(base.y_mean[6][2] != adj.y_mean[6][2]);
}
