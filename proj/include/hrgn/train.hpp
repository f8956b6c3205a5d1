#pragma once

// Two-stage training, simulation pre-training, and fine-tuning. Losses are
// computed in label-standardized units; the stats live in the checkpoint
// metadata so evaluation can map predictions back to degC.

#include <hrgn/assimilate.hpp>
#include <hrgn/dataio.hpp>
#include <hrgn/loss.hpp>
#include <hrgn/model.hpp>
#include <hrgn/params.hpp>

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrgn {

struct TrainConfig {
    double lr = 0.002;
    double lambda = 0.5;
    int epochs = 60;
    int window = 365;   // truncated-unroll length, zero state per window
    double val_fraction = 0.1;  // held-out tail of the training range
    std::uint64_t seed = 0;
};

struct TrainLogRow {
    int epoch;
    std::string stage;
    double loss;
    double recon;
    double val_rmse;
};

struct TrainingDiverged : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void write_train_log(const std::vector<TrainLogRow>& rows, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write training log: " + path);
    out << "epoch,stage,loss,recon_loss,val_rmse\n";
    char buf[160];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%s,%.8g,%.8g,%.8g\n", r.epoch, r.stage.c_str(),
                      r.loss, r.recon, r.val_rmse);
        out << buf;
    }
}

// Label standardization stats; reused from the checkpoint when present so a
// pretrained model keeps its output scale through fine-tuning.
inline void ensure_label_stats(ParameterStore& store, const ObservationSet& labels) {
    if (store.meta.count("y_mean") && store.meta.count("y_std")) return;
    if (labels.empty()) throw std::invalid_argument("no labels to fit output statistics");
    double mean = 0.0;
    for (const auto& r : labels.records) mean += r.y;
    mean /= static_cast<double>(labels.size());
    double var = 0.0;
    for (const auto& r : labels.records) var += (r.y - mean) * (r.y - mean);
    var /= static_cast<double>(labels.size());
    store.meta["y_mean"] = mean;
    store.meta["y_std"] = var > 0.0 ? std::sqrt(var) : 1.0;
}

inline ObservationSet standardize_labels(const ObservationSet& obs, const ParameterStore& store) {
    const double mean = store.meta.at("y_mean");
    const double sd = store.meta.at("y_std");
    ObservationSet out = obs;
    for (auto& r : out.records) r.y = (r.y - mean) / sd;
    return out;
}

struct StageSpec {
    std::string name;            // for the log
    int t_begin = 0;
    int t_end = 0;               // exclusive
    Mode mode = Mode::Full;
    Head head = Head::Gated;
    AssimMethod method = AssimMethod::None;  // Invertible in stage 2
    UpdatePolicy policy;
    double lambda = 0.0;         // reconstruction weight (coupling head only)
    const ObservationSet* labels = nullptr;          // supervised targets, degC
    const ObservationSet* adjustment = nullptr;      // nullptr: same as labels
};

namespace detail {

inline ObservationSet localize(const ObservationSet& obs, int t_begin, int t_end) {
    ObservationSet out;
    for (const auto& r : obs.records)
        if (r.t >= t_begin && r.t < t_end) out.records.push_back({r.segment, r.t - t_begin, r.y});
    return out;
}

inline double window_rmse(const std::vector<std::vector<double>>& preds,
                          const ObservationSet& local_obs) {
    if (local_obs.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (const auto& r : local_obs.records) {
        const double d = preds[r.t][r.segment] - r.y;
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(local_obs.size()));
}

}  // namespace detail

// One training stage: Adam over truncated windows with per-window zero
// state, early stopping on the held-out tail. Mutates `store`; on NaN loss
// the best parameters seen so far are restored before throwing.
inline void train_stage(ParameterStore& store, const DatasetBundle& bundle,
                        const ModelConfig& mcfg, const TrainConfig& cfg,
                        const StageSpec& spec, std::vector<TrainLogRow>* log = nullptr) {
    if (!spec.labels) throw std::invalid_argument("train_stage: no labels");
    ensure_label_stats(store, *spec.labels);
    const ObservationSet labels_std = standardize_labels(*spec.labels, store);
    const ObservationSet adj_std =
        standardize_labels(spec.adjustment ? *spec.adjustment : *spec.labels, store);

    const int span = spec.t_end - spec.t_begin;
    if (span < 2) throw std::invalid_argument("train_stage: training range too short");
    const int val_begin =
        spec.t_begin + std::max(2, static_cast<int>(span * (1.0 - cfg.val_fraction)));
    const int fit_end = std::min(val_begin, spec.t_end);

    std::vector<std::pair<int, int>> windows;
    for (int t0 = spec.t_begin; t0 < fit_end; t0 += cfg.window)
        windows.emplace_back(t0, std::min(t0 + cfg.window, fit_end));

    const double y_mean = store.meta.at("y_mean");
    const double y_sd = store.meta.at("y_std");
    const ObservationSet val_obs = detail::localize(*spec.labels, val_begin, spec.t_end);

    auto validate = [&]() -> double {
        if (val_begin >= spec.t_end || val_obs.empty())
            return std::numeric_limits<double>::quiet_NaN();
        const ModelVars m = model_vars(store, mcfg);
        const SequenceInputs in = bundle.slice(val_begin, spec.t_end);
        RolloutResult roll = rollout_with_assimilation(bundle.graph, bundle.nbr, m, in,
                                                       adj_std, spec.policy, spec.method,
                                                       spec.mode, spec.head,
                                                       /*detach=*/true, val_begin);
        std::vector<std::vector<double>> preds(in.steps(),
                                               std::vector<double>(bundle.graph.n_segments()));
        for (int t = 0; t < in.steps(); ++t)
            for (int i = 0; i < bundle.graph.n_segments(); ++i)
                preds[t][i] = roll.y[t][i].value()(0, 0) * y_sd + y_mean;
        return detail::window_rmse(preds, val_obs);
    };

    ParameterStore best = store;
    double best_val = std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double loss_acc = 0.0, recon_acc = 0.0;
        int batches = 0;
        for (const auto& [w0, w1] : windows) {
            const ObservationSet local = detail::localize(labels_std, w0, w1);
            if (local.empty()) continue;
            const ModelVars m = model_vars(store, mcfg);
            const SequenceInputs in = bundle.slice(w0, w1);
            RolloutResult roll = rollout_with_assimilation(bundle.graph, bundle.nbr, m, in,
                                                           adj_std, spec.policy, spec.method,
                                                           spec.mode, spec.head,
                                                           /*detach=*/false, w0);
            ad::Var sup = masked_mse(roll.y, local);
            ad::Var loss = sup;
            double recon_val = 0.0;
            if (spec.lambda != 0.0 && spec.head == Head::Coupling) {
                ad::Var recon = reconstruction_loss(roll.y, m);
                recon_val = recon.value()(0, 0);
                loss = ad::add(loss, ad::scale(recon, spec.lambda));
            }
            const double loss_val = loss.value()(0, 0);
            if (!std::isfinite(loss_val)) {
                store = best;
                throw TrainingDiverged("training loss diverged (stage " + spec.name +
                                       ", epoch " + std::to_string(epoch) + ")");
            }
            ad::backward(loss);
            store.adam_step(ParameterStore::collect_grads(m.leaves), cfg.lr);
            loss_acc += loss_val;
            recon_acc += recon_val;
            ++batches;
        }
        if (batches == 0) throw std::invalid_argument("train_stage: no observations in range");

        const double val = validate();
        if (log)
            log->push_back({epoch, spec.name, loss_acc / batches, recon_acc / batches, val});
        if (std::isfinite(val) && val < best_val) {
            best_val = val;
            best = store;
        }
    }
    if (std::isfinite(best_val)) store = best;
}

}  // namespace hrgn
