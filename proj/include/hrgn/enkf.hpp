#pragma once

// Stochastic ensemble Kalman filter baseline: perturbed-observation update
// in scalar observation space, applied per observed segment to that
// segment's cell state. Evaluation-only (members propagate detached).

#include <hrgn/assimilate.hpp>
#include <hrgn/model.hpp>
#include <hrgn/observations.hpp>

#include <random>
#include <stdexcept>
#include <vector>

namespace hrgn {

struct EnkfConfig {
    int ensemble_size = 30;
    double obs_noise = 0.5;    // sigma_obs, degC (or model units)
    double proc_noise = 0.05;  // sigma_proc, added to c per member per step
    std::uint64_t seed = 0;

    void validate() const {
        if (ensemble_size < 2) throw std::invalid_argument("EnKF ensemble size must be >= 2");
        if (obs_noise <= 0.0 || proc_noise <= 0.0)
            throw std::invalid_argument("EnKF noise levels must be positive");
    }
};

// One scalar-observation update of a state ensemble. `states` holds each
// member's cell state for the observed segment; `preds` the members'
// predictions for it. Gain uses the ensemble cross-covariance between state
// and prediction; observations are perturbed per member.
inline void enkf_adjust(std::vector<Vector>& states, const std::vector<double>& preds,
                        double y_obs, const EnkfConfig& cfg, std::mt19937_64& rng) {
    cfg.validate();
    const int E = static_cast<int>(states.size());
    if (static_cast<int>(preds.size()) != E)
        throw std::invalid_argument("enkf_adjust: state/prediction counts differ");

    double y_mean = 0.0;
    for (double p : preds) y_mean += p;
    y_mean /= E;
    Vector c_mean = Vector::Zero(states[0].size());
    for (const auto& c : states) c_mean += c;
    c_mean /= E;

    double var_y = 0.0;
    Vector cov_cy = Vector::Zero(states[0].size());
    for (int e = 0; e < E; ++e) {
        const double dy = preds[e] - y_mean;
        var_y += dy * dy;
        cov_cy += (states[e] - c_mean) * dy;
    }
    var_y /= (E - 1);
    cov_cy /= (E - 1);

    const Vector gain = cov_cy / (var_y + cfg.obs_noise * cfg.obs_noise);
    std::normal_distribution<double> noise(0.0, cfg.obs_noise);
    for (int e = 0; e < E; ++e) {
        const double y_pert = y_obs + noise(rng);
        states[e] += gain * (y_pert - preds[e]);
    }
}

struct EnkfRollout {
    std::vector<std::vector<double>> y_mean;  // [t][segment], ensemble mean
};

inline EnkfRollout rollout_enkf(const HeteroGraph& g, const NeighborIndex& nbr,
                                const ModelVars& m, const SequenceInputs& in,
                                const ObservationSet& adjustment_obs,
                                const UpdatePolicy& policy, const EnkfConfig& cfg,
                                int t_offset = 0) {
    cfg.validate();
    const int T = in.steps();
    const int N = g.n_segments();
    const int E = cfg.ensemble_size;
    const auto obs_by_segment = adjustment_obs.by_segment(N);

    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> proc(0.0, cfg.proc_noise);

    std::vector<State> members(E, zero_state(g, m.cfg.hidden));
    std::vector<ad::Var> l = to_vars(in.l);
    const Vector zero_r = Vector::Zero(m.cfg.release_dim);

    EnkfRollout out;
    out.y_mean.assign(T, std::vector<double>(N, 0.0));
    std::vector<std::vector<double>> preds(E, std::vector<double>(N, 0.0));

    for (int t = 0; t < T; ++t) {
        std::vector<ad::Var> x_t = to_vars(in.x[t]);
        std::vector<ad::Var> r_prev =
            t > 0 ? to_vars(in.r[t - 1])
                  : std::vector<ad::Var>(in.l.size(), ad::Var::constant(zero_r));
        std::vector<std::vector<ad::Var>> o_t(E);
        for (int e = 0; e < E; ++e) {
            StepOutput step = step_network(g, nbr, m, members[e], x_t, r_prev, l,
                                           Mode::Full, Head::Gated);
            members[e] = std::move(step.state);
            members[e].detach();
            for (int i = 0; i < N; ++i) preds[e][i] = step.y[i].value()(0, 0);
            // Process perturbation keeps the ensemble spread alive.
            for (int i = 0; i < N; ++i) {
                Matrix c = members[e].c[i].value();
                for (Eigen::Index d = 0; d < c.rows(); ++d) c(d, 0) += proc(rng);
                members[e].c[i] = ad::Var::constant(std::move(c));
            }
        }
        for (int i = 0; i < N; ++i) {
            double acc = 0.0;
            for (int e = 0; e < E; ++e) acc += preds[e][i];
            out.y_mean[t][i] = acc / E;
        }

        const int global_t = t_offset + t;
        if (policy.fires_at(global_t)) {
            const auto obs = observations_for_period(obs_by_segment, global_t, policy.period);
            for (const auto& [seg, y] : obs) {
                std::vector<Vector> c_ens(E);
                std::vector<double> y_ens(E);
                for (int e = 0; e < E; ++e) {
                    c_ens[e] = members[e].c[seg].value().col(0);
                    y_ens[e] = preds[e][seg];
                }
                enkf_adjust(c_ens, y_ens, y, cfg, rng);
                for (int e = 0; e < E; ++e) {
                    Matrix c(c_ens[e].size(), 1);
                    c.col(0) = c_ens[e];
                    members[e].c[seg] = ad::Var::constant(std::move(c));
                }
            }
        }
    }
    return out;
}

}  // namespace hrgn
