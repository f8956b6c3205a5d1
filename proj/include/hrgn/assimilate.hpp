#pragma once

// State adjustment during rollouts: the invertible-coupling update
// (observation -> hidden via u, hidden -> state via the coupling inverse)
// and the update-period policy. Observations are consumed strictly
// causally: a prediction at time t never sees data from t or later.

#include <hrgn/coupling.hpp>
#include <hrgn/model.hpp>
#include <hrgn/observations.hpp>

#include <map>
#include <stdexcept>
#include <vector>

namespace hrgn {

enum class AssimMethod { None, Invertible, Enkf };

inline AssimMethod assim_method_from(const std::string& s) {
    if (s == "none") return AssimMethod::None;
    if (s == "invertible") return AssimMethod::Invertible;
    if (s == "enkf") return AssimMethod::Enkf;
    throw std::invalid_argument("unknown assimilation method '" + s +
                                "' (expected none|invertible|enkf)");
}

struct UpdatePolicy {
    int period = 1;  // k; adjustments fire at t % k == 0

    bool fires_at(int t) const {
        if (period < 1) throw std::invalid_argument("update period must be >= 1");
        return t % period == 0;
    }
};

// Replaces c_i for each observed segment with the coupling inverse of u(y).
// Hidden and reservoir states are untouched; predictions already made at t
// are not revised. `obs` maps segment index -> observed value (in the same
// units the model predicts, i.e. standardized if the trainer standardizes).
inline void assimilate_step(State& state, const std::vector<ad::Var>& o_t,
                            const std::map<int, double>& obs, const ModelVars& m,
                            const UpdatePolicy& policy, int t) {
    if (!policy.fires_at(t))
        throw std::logic_error("assimilate_step called at a non-policy time index");
    for (const auto& [seg, y] : obs) {
        if (seg < 0 || seg >= static_cast<int>(state.c.size()))
            throw std::out_of_range("assimilate_step: segment index out of range");
        const ad::Var h_new = observation_to_hidden(ad::Var::scalar(y), m.u);
        state.c[seg] = coupling_inverse(h_new, o_t[seg], m.coupling);
    }
}

// For each segment, the most recent observation with time in (t-k, t].
inline std::map<int, double> observations_for_period(
    const std::vector<std::vector<std::pair<int, double>>>& obs_by_segment, int t,
    int period) {
    std::map<int, double> out;
    for (int i = 0; i < static_cast<int>(obs_by_segment.size()); ++i) {
        const auto& v = obs_by_segment[i];
        // Last record with time <= t.
        auto it = std::upper_bound(v.begin(), v.end(), std::make_pair(t, 1e300));
        if (it == v.begin()) continue;
        --it;
        if (it->first > t - period) out[i] = it->second;
    }
    return out;
}

// Predict-then-adjust unroll. Predictions at each t are recorded before any
// adjustment at t. Method None reduces to forward_sequence. The EnKF variant
// lives in enkf.hpp (it is evaluation-only).
inline RolloutResult rollout_with_assimilation(
    const HeteroGraph& g, const NeighborIndex& nbr, const ModelVars& m,
    const SequenceInputs& in, const ObservationSet& adjustment_obs,
    const UpdatePolicy& policy, AssimMethod method, Mode mode, Head head,
    bool detach_states = false, int t_offset = 0) {
    if (method == AssimMethod::Enkf)
        throw std::invalid_argument("use rollout_enkf for the EnKF baseline");
    if (method == AssimMethod::None)
        return forward_sequence(g, nbr, m, in, mode, head, detach_states);
    if (head != Head::Coupling)
        throw std::invalid_argument("invertible assimilation requires the coupling head");

    const int T = in.steps();
    if (T < 1) throw std::invalid_argument("rollout_with_assimilation: empty sequence");
    const auto obs_by_segment = adjustment_obs.by_segment(g.n_segments());

    State state = zero_state(g, m.cfg.hidden);
    std::vector<ad::Var> l = to_vars(in.l);
    const Vector zero_r = Vector::Zero(m.cfg.release_dim);

    RolloutResult res;
    res.y.reserve(T);
    for (int t = 0; t < T; ++t) {
        std::vector<ad::Var> x_t = to_vars(in.x[t]);
        std::vector<ad::Var> r_prev =
            t > 0 ? to_vars(in.r[t - 1])
                  : std::vector<ad::Var>(in.l.size(), ad::Var::constant(zero_r));
        StepOutput step = step_network(g, nbr, m, state, x_t, r_prev, l, mode, head);
        state = std::move(step.state);

        const int global_t = t_offset + t;
        if (policy.fires_at(global_t)) {
            const auto obs = observations_for_period(obs_by_segment, global_t, policy.period);
            if (!obs.empty()) assimilate_step(state, step.o, obs, m, policy, global_t);
        }
        if (detach_states) {
            state.detach();
            for (auto& y : step.y) y = y.detach();
        }
        res.y.push_back(std::move(step.y));
    }
    res.final_state = std::move(state);
    return res;
}

}  // namespace hrgn
