#pragma once

// End-to-end drivers: the two-stage protocol, simulation pre-training,
// fine-tuning, and checkpoint evaluation with any assimilation method.
// Shared by the CLI and the acceptance suite.

#include <hrgn/dataio.hpp>
#include <hrgn/enkf.hpp>
#include <hrgn/synth.hpp>
#include <hrgn/train.hpp>

#include <cmath>
#include <map>
#include <string>
#include <vector>

namespace hrgn {

// Stage boundaries mirroring the proportional split of the training window.
struct StageSplit {
    int stage1_end;  // first half of [0, train_end)
    int train_end;
    int test_end;
};

inline StageSplit stage_split(const DatasetBundle& b) {
    return {b.train_end / 2, b.train_end, b.days};
}

// Plain HRGN: gated head, single stage over the whole training window.
inline ParameterStore train_plain(const DatasetBundle& bundle, const ModelConfig& mcfg,
                                  const TrainConfig& tcfg, const ObservationSet& labels,
                                  std::vector<TrainLogRow>* log = nullptr) {
    ParameterStore store;
    register_model(store, mcfg, tcfg.seed);
    StageSpec s;
    s.name = "stage1";
    s.t_begin = 0;
    s.t_end = bundle.train_end;
    s.head = Head::Gated;
    s.labels = &labels;
    train_stage(store, bundle, mcfg, tcfg, s, log);
    return store;
}

// HRGN-adj: coupling head; stage 1 without assimilation on the first half,
// stage 2 with invertible state adjustment on the second half.
inline ParameterStore train_adjusted(const DatasetBundle& bundle, const ModelConfig& mcfg,
                                     const TrainConfig& tcfg, const ObservationSet& labels,
                                     const UpdatePolicy& policy,
                                     std::vector<TrainLogRow>* log = nullptr) {
    ParameterStore store;
    register_model(store, mcfg, tcfg.seed);
    const StageSplit split = stage_split(bundle);

    StageSpec s1;
    s1.name = "stage1";
    s1.t_begin = 0;
    s1.t_end = split.stage1_end;
    s1.head = Head::Coupling;
    s1.lambda = tcfg.lambda;
    s1.labels = &labels;
    train_stage(store, bundle, mcfg, tcfg, s1, log);

    StageSpec s2;
    s2.name = "stage2";
    s2.t_begin = split.stage1_end;
    s2.t_end = split.train_end;
    s2.head = Head::Coupling;
    s2.method = AssimMethod::Invertible;
    s2.policy = policy;
    s2.lambda = tcfg.lambda;
    s2.labels = &labels;
    train_stage(store, bundle, mcfg, tcfg, s2, log);
    return store;
}

// Pre-training on dense simulated labels with the reservoir-free state
// transition; reservoir-path parameters keep their initialization.
inline ParameterStore pretrain(const DatasetBundle& bundle, const ModelConfig& mcfg,
                               const TrainConfig& tcfg, Head head,
                               std::vector<TrainLogRow>* log = nullptr) {
    if (bundle.simulation.empty())
        throw std::invalid_argument("pretrain: dataset has no simulation labels");
    ParameterStore store;
    register_model(store, mcfg, tcfg.seed);
    const ObservationSet labels = bundle.simulation.window(0, bundle.train_end);
    StageSpec s;
    s.name = "pretrain";
    s.t_begin = 0;
    s.t_end = bundle.train_end;
    s.mode = Mode::Pretrain;
    s.head = head;
    s.labels = &labels;
    train_stage(store, bundle, mcfg, tcfg, s, log);
    return store;
}

// Fine-tuning: full dynamics from pretrained weights; with_adjustment runs
// the two-stage protocol, otherwise a single plain stage.
inline void finetune(ParameterStore& store, const DatasetBundle& bundle,
                     const ModelConfig& mcfg, const TrainConfig& tcfg,
                     const ObservationSet& labels, bool with_adjustment,
                     const UpdatePolicy& policy, std::vector<TrainLogRow>* log = nullptr) {
    const StageSplit split = stage_split(bundle);
    StageSpec s1;
    s1.name = "finetune1";
    s1.t_begin = 0;
    s1.t_end = with_adjustment ? split.stage1_end : split.train_end;
    s1.head = with_adjustment ? Head::Coupling : Head::Gated;
    s1.lambda = with_adjustment ? tcfg.lambda : 0.0;
    s1.labels = &labels;
    train_stage(store, bundle, mcfg, tcfg, s1, log);
    if (with_adjustment) {
        StageSpec s2;
        s2.name = "finetune2";
        s2.t_begin = split.stage1_end;
        s2.t_end = split.train_end;
        s2.head = Head::Coupling;
        s2.method = AssimMethod::Invertible;
        s2.policy = policy;
        s2.lambda = tcfg.lambda;
        s2.labels = &labels;
        train_stage(store, bundle, mcfg, tcfg, s2, log);
    }
}

struct EvalOptions {
    Head head = Head::Gated;
    AssimMethod method = AssimMethod::None;
    UpdatePolicy policy;
    EnkfConfig enkf;
    int t_begin = 0;
    int t_end = 0;                       // exclusive; 0 means "to the end"
    const ObservationSet* adjustment = nullptr;  // degC, used when method != None
};

// Rollout over [t_begin, t_end) returning predictions in degC, [t][segment].
inline std::vector<std::vector<double>> predict_series(const ParameterStore& store,
                                                       const DatasetBundle& bundle,
                                                       const ModelConfig& mcfg,
                                                       const EvalOptions& opt) {
    const int t_end = opt.t_end > 0 ? opt.t_end : bundle.days;
    const double y_mean = store.meta.at("y_mean");
    const double y_sd = store.meta.at("y_std");
    const ModelVars m = model_vars(store, mcfg);
    const SequenceInputs in = bundle.slice(opt.t_begin, t_end);
    const int N = bundle.graph.n_segments();

    ObservationSet adj_std;
    if (opt.method != AssimMethod::None) {
        if (!opt.adjustment)
            throw std::invalid_argument("predict_series: assimilation needs observations");
        adj_std = standardize_labels(*opt.adjustment, store);
    }

    std::vector<std::vector<double>> preds(in.steps(), std::vector<double>(N));
    if (opt.method == AssimMethod::Enkf) {
        EnkfConfig ecfg = opt.enkf;
        ecfg.obs_noise = opt.enkf.obs_noise / y_sd;  // degC -> model units
        EnkfRollout roll = rollout_enkf(bundle.graph, bundle.nbr, m, in, adj_std,
                                        opt.policy, ecfg, opt.t_begin);
        for (int t = 0; t < in.steps(); ++t)
            for (int i = 0; i < N; ++i) preds[t][i] = roll.y_mean[t][i] * y_sd + y_mean;
    } else {
        RolloutResult roll = rollout_with_assimilation(bundle.graph, bundle.nbr, m, in,
                                                       adj_std, opt.policy, opt.method,
                                                       Mode::Full, opt.head,
                                                       /*detach=*/true, opt.t_begin);
        for (int t = 0; t < in.steps(); ++t)
            for (int i = 0; i < N; ++i) preds[t][i] = roll.y[t][i].value()(0, 0) * y_sd + y_mean;
    }
    return preds;
}

struct Metrics {
    double overall = 0.0;
    std::map<int, double> per_segment;  // segment index -> RMSE
    std::size_t count = 0;
};

inline Metrics rmse_metrics(const std::vector<std::vector<double>>& preds,
                            const ObservationSet& obs, int t_offset) {
    Metrics m;
    std::map<int, std::pair<double, std::size_t>> per;
    double acc = 0.0;
    for (const auto& r : obs.records) {
        const int t = r.t - t_offset;
        if (t < 0 || t >= static_cast<int>(preds.size())) continue;
        const double d = preds[t][r.segment] - r.y;
        acc += d * d;
        per[r.segment].first += d * d;
        per[r.segment].second += 1;
        ++m.count;
    }
    if (m.count == 0) throw std::invalid_argument("rmse_metrics: no observations in window");
    m.overall = std::sqrt(acc / static_cast<double>(m.count));
    for (const auto& [seg, p] : per)
        m.per_segment[seg] = std::sqrt(p.first / static_cast<double>(p.second));
    return m;
}

}  // namespace hrgn
