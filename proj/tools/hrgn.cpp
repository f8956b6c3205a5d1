// Command-line front end: synthetic data generation, training in all its
// variants, evaluation with optional state adjustment, and a finite-difference
// gradient self-check. Configuration comes from a JSON file merged over
// defaults; the resolved configuration is echoed so runs are reproducible.

#include <CLI11.hpp>
#include <json.hpp>

#include <hrgn/synth.hpp>
#include <hrgn/workflow.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

using nlohmann::json;
using namespace hrgn;

namespace {

json default_config() {
    return json{
        {"data_dir", "."},
        {"train_end_date", "2003-01-01"},
        {"model",
         {{"hidden", 20}, {"coupling_layers", 2}, {"clamp_bound", 5.0}}},
        {"train",
         {{"lr", 0.002},
          {"lambda", 0.5},
          {"epochs", 60},
          {"window", 365},
          {"val_fraction", 0.1}}},
        {"enkf", {{"ensemble_size", 30}, {"obs_noise", 0.5}, {"proc_noise", 0.05}}},
        {"synth",
         {{"n_segments", 8},
          {"n_reservoirs", 2},
          {"days", 1460},
          {"air_mean_c", 10.0},
          {"air_amplitude_c", 12.0},
          {"air_noise_c", 1.0},
          {"mixing_fraction", 0.25},
          {"hypolimnion_c", 7.0},
          {"obs_noise_c", 0.3},
          {"sim_bias_c", 1.0}}},
    };
}

void merge_into(json& base, const json& over) {
    for (auto it = over.begin(); it != over.end(); ++it) {
        if (it->is_object() && base.contains(it.key()) && base[it.key()].is_object())
            merge_into(base[it.key()], *it);
        else
            base[it.key()] = *it;
    }
}

json resolve_config(const std::string& path) {
    json cfg = default_config();
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot read config file: " + path);
        json user = json::parse(in);
        merge_into(cfg, user);
    }
    return cfg;
}

struct CommonArgs {
    std::string config_path;
    std::string out = "out";
    std::uint64_t seed = 0;
    std::vector<std::string> hide_releases;
    double obs_fraction = 1.0;
    std::string method = "none";
    int update_period = 1;
};

void add_common(CLI::App* app, CommonArgs& a, bool with_assim) {
    app->add_option("--config", a.config_path, "JSON configuration file");
    app->add_option("--seed", a.seed, "random seed");
    app->add_option("--out", a.out, "output directory");
    app->add_option("--hide-releases", a.hide_releases,
                    "reservoir ids whose release records are withheld")
        ->delimiter(',');
    app->add_option("--obs-fraction", a.obs_fraction,
                    "fraction of observations kept (0, 1]");
    if (with_assim) {
        app->add_option("--method", a.method, "assimilation method")
            ->check(CLI::IsMember({"none", "invertible", "enkf"}));
        app->add_option("--update-period", a.update_period, "state-update period k (days)")
            ->check(CLI::PositiveNumber);
    }
}

ModelConfig model_config_from(const json& cfg) {
    ModelConfig m;
    m.hidden = cfg["model"]["hidden"].get<int>();
    m.coupling_layers = cfg["model"]["coupling_layers"].get<int>();
    m.clamp_bound = cfg["model"]["clamp_bound"].get<double>();
    m.drivers = 10;
    m.release_dim = 4;  // three release types plus the availability flag
    m.meta_dim = 5;
    return m;
}

TrainConfig train_config_from(const json& cfg, std::uint64_t seed) {
    TrainConfig t;
    t.lr = cfg["train"]["lr"].get<double>();
    t.lambda = cfg["train"]["lambda"].get<double>();
    t.epochs = cfg["train"]["epochs"].get<int>();
    t.window = cfg["train"]["window"].get<int>();
    t.val_fraction = cfg["train"]["val_fraction"].get<double>();
    t.seed = seed;
    return t;
}

EnkfConfig enkf_config_from(const json& cfg, std::uint64_t seed) {
    EnkfConfig e;
    e.ensemble_size = cfg["enkf"]["ensemble_size"].get<int>();
    e.obs_noise = cfg["enkf"]["obs_noise"].get<double>();
    e.proc_noise = cfg["enkf"]["proc_noise"].get<double>();
    e.seed = seed;
    return e;
}

DatasetBundle load_data(const json& cfg, const CommonArgs& a) {
    LoadOptions opt;
    opt.dir = cfg["data_dir"].get<std::string>();
    opt.train_end_date = cfg["train_end_date"].get<std::string>();
    opt.hide_releases.insert(a.hide_releases.begin(), a.hide_releases.end());
    DatasetBundle b = load_bundle(opt);
    if (a.obs_fraction < 1.0)
        b.observations = sparsify(b.observations, a.obs_fraction, a.seed ^ 0x0b5f00d5ULL);
    return b;
}

void echo_config(const json& cfg, const CommonArgs& a, const std::string& command) {
    json resolved = cfg;
    resolved["command"] = command;
    resolved["seed"] = a.seed;
    resolved["out"] = a.out;
    resolved["obs_fraction"] = a.obs_fraction;
    resolved["hide_releases"] = a.hide_releases;
    resolved["method"] = a.method;
    resolved["update_period"] = a.update_period;
    std::filesystem::create_directories(a.out);
    std::ofstream f(a.out + "/resolved_config.json");
    f << resolved.dump(2) << "\n";
    std::cout << resolved.dump(2) << std::endl;
}

// Model geometry travels inside the checkpoint so evaluation needs no
// external bookkeeping.
void stamp_meta(ParameterStore& store, const ModelConfig& m, Head head) {
    store.meta["cfg.hidden"] = m.hidden;
    store.meta["cfg.coupling_layers"] = m.coupling_layers;
    store.meta["cfg.clamp_bound"] = m.clamp_bound;
    store.meta["cfg.release_dim"] = m.release_dim;
    store.meta["head"] = head == Head::Coupling ? 1.0 : 0.0;
}

ModelConfig model_config_from_meta(const ParameterStore& store) {
    ModelConfig m;
    m.hidden = static_cast<int>(store.meta.at("cfg.hidden"));
    m.coupling_layers = static_cast<int>(store.meta.at("cfg.coupling_layers"));
    m.clamp_bound = store.meta.at("cfg.clamp_bound");
    m.release_dim = static_cast<int>(store.meta.at("cfg.release_dim"));
    return m;
}

Head head_from_meta(const ParameterStore& store) {
    return store.meta.at("head") == 1.0 ? Head::Coupling : Head::Gated;
}

void write_predictions(const std::string& path, const DatasetBundle& b,
                       const std::vector<std::vector<double>>& preds, int t_begin) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw std::runtime_error("cannot write " + path);
    std::fprintf(f, "segment_id,date,y_hat,y_obs\n");
    std::map<std::pair<int, int>, double> obs;
    for (const auto& r : b.observations.records) obs[{r.segment, r.t}] = r.y;
    for (int t = 0; t < static_cast<int>(preds.size()); ++t)
        for (int i = 0; i < b.graph.n_segments(); ++i) {
            std::fprintf(f, "%s,%s,%.6f", b.graph.segment_ids[i].c_str(),
                         format_date(b.day0 + t_begin + t).c_str(), preds[t][i]);
            auto it = obs.find({i, t_begin + t});
            if (it != obs.end())
                std::fprintf(f, ",%.6f\n", it->second);
            else
                std::fprintf(f, ",\n");
        }
    std::fclose(f);
}

void write_metrics(const std::string& path, const DatasetBundle& b, const Metrics& m) {
    json out;
    out["rmse"] = m.overall;
    out["n_obs"] = m.count;
    json per = json::object();
    for (const auto& [seg, v] : m.per_segment) per[b.graph.segment_ids[seg]] = v;
    out["rmse_per_segment"] = per;
    std::ofstream f(path);
    f << out.dump(2) << "\n";
    std::cout << out.dump(2) << std::endl;
}

int run_simulate(const json& cfg, const CommonArgs& a) {
    echo_config(cfg, a, "simulate");
    SynthConfig s;
    const json& j = cfg["synth"];
    s.n_segments = j["n_segments"].get<int>();
    s.n_reservoirs = j["n_reservoirs"].get<int>();
    s.days = j["days"].get<int>();
    s.air_mean_c = j["air_mean_c"].get<double>();
    s.air_amplitude_c = j["air_amplitude_c"].get<double>();
    s.air_noise_c = j["air_noise_c"].get<double>();
    s.mixing_fraction = j["mixing_fraction"].get<double>();
    s.hypolimnion_c = j["hypolimnion_c"].get<double>();
    s.obs_noise_c = j["obs_noise_c"].get<double>();
    s.sim_bias_c = j["sim_bias_c"].get<double>();
    s.obs_fraction = a.obs_fraction;
    s.seed = a.seed;
    const SynthDataset d = generate(s);
    write_dataset(d, a.out);
    std::cout << "wrote " << d.days << " days, " << d.graph.n_segments() << " segments, "
              << d.graph.n_reservoirs() << " reservoirs, " << d.observations.size()
              << " observations to " << a.out << std::endl;
    return 0;
}

int run_train(const json& cfg, const CommonArgs& a, const std::string& init_path,
              bool is_finetune) {
    echo_config(cfg, a, is_finetune ? "finetune" : "train");
    const DatasetBundle bundle = load_data(cfg, a);
    const ModelConfig mcfg = model_config_from(cfg);
    const TrainConfig tcfg = train_config_from(cfg, a.seed);
    const ObservationSet labels = bundle.observations.window(0, bundle.train_end);
    const UpdatePolicy policy{a.update_period};
    const bool adjusted = a.method == "invertible";
    if (a.method == "enkf")
        throw std::runtime_error("the EnKF baseline is evaluation-only; train with "
                                 "--method none and evaluate with --method enkf");

    ParameterStore store;
    std::vector<TrainLogRow> log;
    if (is_finetune) {
        store = ParameterStore::load(init_path);
        finetune(store, bundle, model_config_from_meta(store), tcfg, labels, adjusted,
                 policy, &log);
        stamp_meta(store, model_config_from_meta(store),
                   adjusted ? Head::Coupling : Head::Gated);
    } else if (adjusted) {
        store = train_adjusted(bundle, mcfg, tcfg, labels, policy, &log);
        stamp_meta(store, mcfg, Head::Coupling);
    } else {
        store = train_plain(bundle, mcfg, tcfg, labels, &log);
        stamp_meta(store, mcfg, Head::Gated);
    }
    store.save(a.out + "/checkpoint.txt");
    write_train_log(log, a.out + "/train_log.csv");
    std::cout << "saved checkpoint to " << a.out << "/checkpoint.txt" << std::endl;
    return 0;
}

int run_pretrain(const json& cfg, const CommonArgs& a) {
    echo_config(cfg, a, "pretrain");
    const DatasetBundle bundle = load_data(cfg, a);
    const ModelConfig mcfg = model_config_from(cfg);
    const TrainConfig tcfg = train_config_from(cfg, a.seed);
    const Head head = a.method == "invertible" ? Head::Coupling : Head::Gated;
    std::vector<TrainLogRow> log;
    ParameterStore store = pretrain(bundle, mcfg, tcfg, head, &log);
    stamp_meta(store, mcfg, head);
    store.save(a.out + "/checkpoint.txt");
    write_train_log(log, a.out + "/train_log.csv");
    std::cout << "saved pretrained checkpoint to " << a.out << "/checkpoint.txt"
              << std::endl;
    return 0;
}

int run_evaluate(const json& cfg, const CommonArgs& a, const std::string& ckpt_path) {
    echo_config(cfg, a, "evaluate");
    const DatasetBundle bundle = load_data(cfg, a);
    const ParameterStore store = ParameterStore::load(ckpt_path);
    const ModelConfig mcfg = model_config_from_meta(store);

    EvalOptions opt;
    opt.method = assim_method_from(a.method);
    opt.policy = UpdatePolicy{a.update_period};
    opt.enkf = enkf_config_from(cfg, a.seed);
    opt.t_begin = bundle.train_end;
    opt.adjustment = &bundle.observations;
    opt.head = head_from_meta(store);
    if (opt.method == AssimMethod::Invertible && opt.head != Head::Coupling)
        throw std::runtime_error(
            "this checkpoint was trained with the gated head; invertible "
            "assimilation requires a checkpoint trained with --method invertible");

    const auto preds = predict_series(store, bundle, mcfg, opt);
    const ObservationSet test_obs =
        bundle.observations.window(bundle.train_end, bundle.days);
    const Metrics m = rmse_metrics(preds, test_obs, bundle.train_end);
    write_predictions(a.out + "/predictions.csv", bundle, preds, bundle.train_end);
    write_metrics(a.out + "/metrics.json", bundle, m);
    return 0;
}

int run_gradcheck(const json& cfg, const CommonArgs& a) {
    echo_config(cfg, a, "gradcheck");
    SynthConfig s;
    s.n_segments = 8;
    s.n_reservoirs = 2;
    s.days = 730;
    s.seed = a.seed;
    const SynthDataset d = generate(s);
    const NeighborIndex nbr = neighbor_index(d.graph);

    ModelConfig mcfg = model_config_from(cfg);
    mcfg.release_dim = 3;
    ParameterStore store;
    register_model(store, mcfg, a.seed + 1);

    SequenceInputs in;
    for (int t = 0; t < 10; ++t) {
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
    std::mt19937_64 rng(a.seed + 2);
    std::normal_distribution<double> n01(0.0, 1.0);
    for (int t = 2; t < 10; t += 3)
        for (int i = 0; i < d.graph.n_segments(); i += 3) obs.add(i, t, n01(rng));
    obs.finalize();

    auto eval = [&](bool want_grads) {
        ModelVars m = model_vars(store, mcfg);
        RolloutResult roll = forward_sequence(d.graph, nbr, m, in, Mode::Full, Head::Coupling);
        ad::Var loss = total_loss(roll.y, obs, m, 0.5);
        if (want_grads) {
            ad::backward(loss);
            return std::make_pair(loss.value()(0, 0), ParameterStore::collect_grads(m.leaves));
        }
        return std::make_pair(loss.value()(0, 0), std::map<std::string, Matrix>{});
    };
    auto [loss0, grads] = eval(true);

    double worst = 0.0;
    const double step = 3e-5, floor = 1e-6;
    for (auto& [name, entry] : store.entries) {
        for (Eigen::Index i = 0; i < entry.value.rows(); ++i)
            for (Eigen::Index j = 0; j < entry.value.cols(); ++j) {
                const double saved = entry.value(i, j);
                entry.value(i, j) = saved + step;
                const double up = eval(false).first;
                entry.value(i, j) = saved - step;
                const double dn = eval(false).first;
                entry.value(i, j) = saved;
                const double fd = (up - dn) / (2.0 * step);
                const double an = grads.at(name)(i, j);
                if (std::abs(fd) < floor && std::abs(an) < floor) continue;
                worst = std::max(worst,
                                 std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), floor}));
            }
    }
    std::printf("gradcheck: loss=%.8g max_rel_error=%.3e\n", loss0, worst);
    const bool ok = worst < 1e-4;
    std::printf("gradcheck: %s\n", ok ? "PASS" : "FAIL");
    return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"heterogeneous recurrent graph network for stream temperature"};
    app.require_subcommand(1);

    CommonArgs a;
    std::string init_path, ckpt_path;

    CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_common(simulate, a, false);

    CLI::App* pretrain_cmd =
        app.add_subcommand("pretrain", "pre-train on simulated labels");
    add_common(pretrain_cmd, a, true);

    CLI::App* train = app.add_subcommand("train", "train from scratch on observations");
    add_common(train, a, true);

    CLI::App* finetune_cmd =
        app.add_subcommand("finetune", "fine-tune a pretrained checkpoint");
    add_common(finetune_cmd, a, true);
    finetune_cmd->add_option("--init", init_path, "pretrained checkpoint")->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint");
    add_common(evaluate, a, true);
    evaluate->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate")->required();

    CLI::App* assim =
        app.add_subcommand("assimilate-eval", "evaluate with state adjustment");
    add_common(assim, a, true);
    assim->add_option("--checkpoint", ckpt_path, "checkpoint to evaluate")->required();

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference gradient self-check");
    add_common(gradcheck, a, false);

    CLI11_PARSE(app, argc, argv);

    try {
        const json cfg = resolve_config(a.config_path);
        if (simulate->parsed()) return run_simulate(cfg, a);
        if (pretrain_cmd->parsed()) return run_pretrain(cfg, a);
        if (train->parsed()) return run_train(cfg, a, "", false);
        if (finetune_cmd->parsed()) return run_train(cfg, a, init_path, true);
        if (evaluate->parsed() || assim->parsed()) return run_evaluate(cfg, a, ckpt_path);
        if (gradcheck->parsed()) return run_gradcheck(cfg, a);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
