#include <catch2/catch_amalgamated.hpp>

#include <hrgn/loss.hpp>
#include <hrgn/synth.hpp>
#include <hrgn/train.hpp>
#include <hrgn/workflow.hpp>

#include "test_util.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

using namespace hrgn;
using ad::Var;

namespace {

std::vector<std::vector<Var>> const_preds(const std::vector<std::vector<double>>& vals) {
    std::vector<std::vector<Var>> out;
    for (const auto& row : vals) {
        std::vector<Var> r;
        for (double v : row) r.push_back(Var::scalar(v));
        out.push_back(std::move(r));
    }
    return out;
}

std::string temp_dir(const std::string& tag) {
    const auto p = std::filesystem::temp_directory_path() / ("hrgn_test_" + tag);
    std::filesystem::create_directories(p);
    return p.string();
}

// Synthetic fixture written to disk and loaded through the regular CSV path.
DatasetBundle make_bundle(std::uint64_t seed, const std::string& tag,
                          const std::string& train_end = "2003-01-01") {
    const SynthDataset d = generate(testutil::fixture_config(seed));
    const std::string dir = temp_dir(tag);
    write_dataset(d, dir);
    LoadOptions opt;
    opt.dir = dir;
    opt.train_end_date = train_end;
    return load_bundle(opt);
}

ModelConfig bundle_model_config(int hidden = 6, int layers = 1) {
    ModelConfig cfg;
    cfg.hidden = hidden;
    cfg.drivers = 10;
    cfg.release_dim = 4;  // 3 release types + availability flag
    cfg.coupling_layers = layers;
    return cfg;
}

}  // namespace

TEST_CASE("masked MSE matches hand-computed values") {
    auto preds = const_preds({{1.0, 2.0}, {3.0, 4.0}});
    ObservationSet obs;
    obs.add(0, 0, 0.0);   // (1-0)^2 = 1
    obs.add(1, 1, 1.0);   // (4-1)^2 = 9
    obs.finalize();
    CHECK(masked_mse(preds, obs).value()(0, 0) == Catch::Approx(5.0));

    ObservationSet single;
    single.add(1, 0, 2.5);  // (2 - 2.5)^2 = 0.25
    single.finalize();
    CHECK(masked_mse(preds, single).value()(0, 0) == Catch::Approx(0.25));

    SECTION("unobserved entries carry no gradient") {
        std::vector<std::vector<Var>> p = {{Var::scalar(1.0), Var::scalar(2.0)}};
        ObservationSet o;
        o.add(0, 0, 0.5);
        o.finalize();
        Var loss = masked_mse(p, o);
        ad::backward(loss);
        CHECK(p[0][0].grad()(0, 0) == Catch::Approx(2.0 * (1.0 - 0.5)));
        CHECK(p[0][1].grad().size() == 0);  // never touched by the loss
    }

    SECTION("errors") {
        ObservationSet empty;
        CHECK_THROWS_AS(masked_mse(preds, empty), std::invalid_argument);
        ObservationSet outside;
        outside.add(0, 5, 1.0);
        outside.finalize();
        CHECK_THROWS_AS(masked_mse(preds, outside), std::out_of_range);
    }
}

TEST_CASE("reconstruction loss closed forms") {
    ModelConfig cfg = bundle_model_config(4);
    ParameterStore s;
    register_model(s, cfg, 5);

    SECTION("zero parameters: v(u(y)) = 0, so the loss is mean(y^2)") {
        for (auto& [name, e] : s.entries) e.value.setZero();
        ModelVars m = model_vars(s, cfg);
        auto preds = const_preds({{1.0, 2.0}, {3.0, 0.0}});
        CHECK(reconstruction_loss(preds, m).value()(0, 0) ==
              Catch::Approx((1.0 + 4.0 + 9.0 + 0.0) / 4.0));
    }
    SECTION("an exact inverse pair drives the loss to zero") {
        // u(y) = y * w with W_y = w^T / |w|^2 and all biases zero: v(u(y)) = y.
        for (auto& [name, e] : s.entries) e.value.setZero();
        Vector w(4);
        w << 1.0, -2.0, 0.5, 3.0;
        s["u.W"].col(0) = w;
        s["W_y"].row(0) = w.transpose() / w.squaredNorm();
        ModelVars m = model_vars(s, cfg);
        auto preds = const_preds({{0.7, -1.3, 2.2}});
        CHECK(reconstruction_loss(preds, m).value()(0, 0) == Catch::Approx(0.0).margin(1e-16));
    }
    SECTION("general affine case") {
        ModelVars m = model_vars(s, cfg);
        const double y = 1.7;
        const double v_u_y =
            (s.at("W_y") * ((s.at("u.W") * y).col(0) + s.at("u.b").col(0)))(0) + s.at("b_y")(0, 0);
        auto preds = const_preds({{y}});
        CHECK(reconstruction_loss(preds, m).value()(0, 0) ==
              Catch::Approx((y - v_u_y) * (y - v_u_y)));
    }
}

TEST_CASE("total loss is affine in lambda") {
    ModelConfig cfg = bundle_model_config(4);
    ParameterStore s;
    register_model(s, cfg, 6);
    ModelVars m = model_vars(s, cfg);
    auto preds = const_preds({{0.3, -0.8}, {1.1, 0.2}});
    ObservationSet obs;
    obs.add(0, 0, 0.1);
    obs.add(1, 1, -0.4);
    obs.finalize();

    const double sup = masked_mse(preds, obs).value()(0, 0);
    const double rec = reconstruction_loss(preds, m).value()(0, 0);
    CHECK(total_loss(preds, obs, m, 0.0).value()(0, 0) == Catch::Approx(sup));
    CHECK(total_loss(preds, obs, m, 0.5).value()(0, 0) == Catch::Approx(sup + 0.5 * rec));
    CHECK(total_loss(preds, obs, m, 2.0).value()(0, 0) == Catch::Approx(sup + 2.0 * rec));
}

TEST_CASE("total loss gradients through a coupling-head rollout match finite differences") {
    const SynthDataset d = generate(testutil::fixture_config(8));
    ModelConfig cfg = bundle_model_config(6, 1);
    cfg.release_dim = 3;
    ParameterStore s;
    register_model(s, cfg, 77);
    const NeighborIndex nbr = neighbor_index(d.graph);

    SequenceInputs in;
    for (int t = 0; t < 8; ++t) {
        in.x.push_back(d.drivers[t]);
        in.r.push_back(d.releases[t]);
    }
    in.l = d.meta;
    for (auto& row : in.x)
        for (auto& v : row) v = (v.array() / 100.0).matrix();
    for (auto& row : in.r)
        for (auto& v : row) v = (v.array() / 100.0).matrix();
    for (auto& v : in.l) v = (v.array() / 100.0).matrix();

    ObservationSet obs;
    obs.add(0, 3, 0.2);
    obs.add(5, 7, -0.6);
    obs.finalize();

    auto eval = [&](bool want_grads) {
        ModelVars m = model_vars(s, cfg);
        RolloutResult roll = forward_sequence(d.graph, nbr, m, in, Mode::Full, Head::Coupling);
        Var loss = total_loss(roll.y, obs, m, 0.5);
        if (want_grads) {
            ad::backward(loss);
            return std::make_pair(loss.value()(0, 0), ParameterStore::collect_grads(m.leaves));
        }
        return std::make_pair(loss.value()(0, 0), std::map<std::string, Matrix>{});
    };
    auto [lv, grads] = eval(true);
    CHECK(testutil::max_fd_rel_error(s, [&]() { return eval(false).first; }, grads) < 1e-4);
}

TEST_CASE("label statistics") {
    ObservationSet labels;
    labels.add(0, 0, 10.0);
    labels.add(0, 1, 14.0);
    labels.add(1, 0, 12.0);
    labels.finalize();

    ParameterStore s;
    ensure_label_stats(s, labels);
    CHECK(s.meta.at("y_mean") == Catch::Approx(12.0));
    CHECK(s.meta.at("y_std") == Catch::Approx(std::sqrt(8.0 / 3.0)));

    SECTION("existing stats are kept") {
        ObservationSet other;
        other.add(0, 0, 100.0);
        other.finalize();
        ensure_label_stats(s, other);
        CHECK(s.meta.at("y_mean") == Catch::Approx(12.0));
    }
    SECTION("standardization uses the stored stats") {
        ObservationSet std_obs = standardize_labels(labels, s);
        CHECK(std_obs.records[0].y ==
              Catch::Approx((10.0 - 12.0) / std::sqrt(8.0 / 3.0)));
    }
    SECTION("constant labels fall back to unit spread") {
        ParameterStore s2;
        ObservationSet flat;
        flat.add(0, 0, 5.0);
        flat.add(0, 1, 5.0);
        flat.finalize();
        ensure_label_stats(s2, flat);
        CHECK(s2.meta.at("y_std") == 1.0);
    }
    SECTION("no labels is an error") {
        ParameterStore s3;
        CHECK_THROWS_AS(ensure_label_stats(s3, ObservationSet{}), std::invalid_argument);
    }
}

TEST_CASE("training loop behavior") {
    DatasetBundle bundle = make_bundle(12, "train", "2001-01-01");
    ModelConfig mcfg = bundle_model_config();
    TrainConfig tcfg;
    tcfg.epochs = 4;
    tcfg.window = 120;
    tcfg.seed = 3;

    ObservationSet labels = bundle.observations.window(0, bundle.train_end);

    SECTION("zero epochs leave the parameters untouched") {
        ParameterStore store;
        register_model(store, mcfg, 3);
        ParameterStore before = store;
        TrainConfig zero = tcfg;
        zero.epochs = 0;
        StageSpec spec;
        spec.name = "s";
        spec.t_begin = 0;
        spec.t_end = bundle.train_end;
        spec.labels = &labels;
        train_stage(store, bundle, mcfg, zero, spec);
        for (const auto& [name, e] : store.entries)
            CHECK(e.value == before.entries.at(name).value);
    }

    SECTION("training loss decreases over epochs") {
        ParameterStore store;
        register_model(store, mcfg, 3);
        std::vector<TrainLogRow> log;
        StageSpec spec;
        spec.name = "s";
        spec.t_begin = 0;
        spec.t_end = bundle.train_end;
        spec.labels = &labels;
        train_stage(store, bundle, mcfg, tcfg, spec, &log);
        REQUIRE(log.size() == 4);
        CHECK(log.back().loss < log.front().loss);
    }

    SECTION("NaN parameters raise TrainingDiverged") {
        ParameterStore store;
        register_model(store, mcfg, 3);
        store["W_y"](0, 0) = std::numeric_limits<double>::quiet_NaN();
        StageSpec spec;
        spec.name = "s";
        spec.t_begin = 0;
        spec.t_end = bundle.train_end;
        spec.labels = &labels;
        CHECK_THROWS_AS(train_stage(store, bundle, mcfg, tcfg, spec), TrainingDiverged);
    }

    SECTION("pretraining never touches the reservoir-path parameters") {
        ParameterStore store;
        register_model(store, mcfg, 3);
        ParameterStore before = store;
        ObservationSet sim = bundle.simulation.window(0, bundle.train_end);
        REQUIRE(!sim.empty());
        StageSpec spec;
        spec.name = "pre";
        spec.t_begin = 0;
        spec.t_end = bundle.train_end;
        spec.mode = Mode::Pretrain;
        spec.labels = &sim;
        TrainConfig quick = tcfg;
        quick.epochs = 2;
        train_stage(store, bundle, mcfg, quick, spec);

        const std::vector<std::string> frozen = {
            "W_cr", "b_cr", "W_p", "W_p_r", "W_p_cr", "b_p", "W_r_p", "W_r_x", "b_r",
            "f1.W1", "f1.b1", "f1.W2", "f1.b2", "f2.W1", "f2.b1", "f2.W2", "f2.b2"};
        for (const auto& name : frozen) {
            INFO("parameter " << name);
            CHECK(store.entries.at(name).value == before.entries.at(name).value);
        }
        // The segment path did move.
        CHECK(store.entries.at("W_c_x").value != before.entries.at("W_c_x").value);
    }
}

TEST_CASE("training log file format") {
    std::vector<TrainLogRow> rows = {{0, "stage1", 1.5, 0.25, 2.0},
                                     {1, "stage1", 1.2, 0.2, 1.8}};
    const std::string path = temp_dir("log") + "/train_log.csv";
    write_train_log(rows, path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,stage,loss,recon_loss,val_rmse");
    std::getline(in, line);
    CHECK(line == "0,stage1,1.5,0.25,2");
}

TEST_CASE("workflow drivers produce evaluable checkpoints") {
    DatasetBundle bundle = make_bundle(13, "workflow", "2001-01-01");
    ModelConfig mcfg = bundle_model_config();
    TrainConfig tcfg;
    tcfg.epochs = 2;
    tcfg.window = 120;
    tcfg.seed = 4;

    ObservationSet labels = bundle.observations.window(0, bundle.train_end);

    SECTION("plain training and evaluation in degC") {
        ParameterStore store = train_plain(bundle, mcfg, tcfg, labels);
        CHECK(store.meta.count("y_mean") == 1);
        EvalOptions opt;
        opt.t_begin = bundle.train_end;
        auto preds = predict_series(store, bundle, mcfg, opt);
        Metrics m = rmse_metrics(preds, bundle.observations.window(bundle.train_end, bundle.days),
                                 bundle.train_end);
        CHECK(m.count > 0);
        CHECK(std::isfinite(m.overall));
        // Predictions are on a degC scale, not the tanh-bounded internal one.
        double max_abs = 0.0;
        for (const auto& row : preds)
            for (double v : row) max_abs = std::max(max_abs, std::abs(v));
        CHECK(max_abs > 2.0);
    }

    SECTION("two-stage adjusted training evaluates with assimilation") {
        UpdatePolicy policy{1};
        ParameterStore store = train_adjusted(bundle, mcfg, tcfg, labels, policy);
        EvalOptions opt;
        opt.head = Head::Coupling;
        opt.method = AssimMethod::Invertible;
        opt.policy = policy;
        opt.t_begin = bundle.train_end;
        opt.adjustment = &bundle.observations;
        auto preds = predict_series(store, bundle, mcfg, opt);
        CHECK(std::isfinite(rmse_metrics(
                                preds, bundle.observations.window(bundle.train_end, bundle.days),
                                bundle.train_end)
                                .overall));
    }

    SECTION("pretrain then finetune reuses the label scale") {
        ParameterStore store = pretrain(bundle, mcfg, tcfg, Head::Gated);
        const double mean_before = store.meta.at("y_mean");
        finetune(store, bundle, mcfg, tcfg, labels, /*with_adjustment=*/false, UpdatePolicy{1});
        CHECK(store.meta.at("y_mean") == mean_before);
    }
}
