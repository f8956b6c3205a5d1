#pragma once

// The heterogeneous recurrent cell: reservoir state updates, transferred
// variables from upstream reservoirs and segments, LSTM-style gating, and
// the prediction heads (gated or invertible coupling).

#include <hrgn/autodiff.hpp>
#include <hrgn/coupling.hpp>
#include <hrgn/graph.hpp>
#include <hrgn/nn.hpp>
#include <hrgn/params.hpp>

#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace hrgn {

enum class Head { Gated, Coupling };
enum class Mode { Full, Pretrain };

struct ModelConfig {
    int hidden = 20;
    int drivers = 10;
    int release_dim = 3;  // 4 when the loader appends an availability flag
    int meta_dim = 5;
    int coupling_layers = 2;
    double clamp_bound = 5.0;
};

inline void register_model(ParameterStore& store, const ModelConfig& cfg,
                           std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int H = cfg.hidden;
    const int D = cfg.drivers;
    const int R = cfg.release_dim;

    store.add_uniform("W_cr", H, H, H, rng);
    store.add_zeros("b_cr", H);
    register_mlp(store, "f1", cfg.meta_dim, H, H, rng);
    register_mlp(store, "f2", cfg.meta_dim, H, H, rng);

    store.add_uniform("W_p", H, H, H, rng);
    store.add_uniform("W_p_r", H, R, R, rng);
    store.add_uniform("W_p_cr", H, H, H, rng);
    store.add_zeros("b_p", H);
    store.add_uniform("W_q", H, H, H, rng);
    store.add_zeros("b_q", H);

    store.add_uniform("W_c_h", H, H, H, rng);
    store.add_uniform("W_c_x", H, D, D, rng);
    store.add_zeros("b_c", H);

    const char* gates[] = {"f", "g", "r", "s"};
    for (const char* g : gates) {
        const std::string gs(g);
        const char* rec = (gs == "r") ? "p" : (gs == "s") ? "q" : "h";
        store.add_uniform("W_" + gs + "_" + rec, H, H, H, rng);
        store.add_uniform("W_" + gs + "_x", H, D, D, rng);
        store.add_zeros("b_" + gs, H);
    }

    store.add_uniform("W_o_h", H, H, H, rng);
    store.add_uniform("W_o_x", H, D, D, rng);
    store.add_zeros("b_o", H);
    store.add_uniform("W_y", 1, H, H, rng);
    store.add_zeros("b_y", 1);

    register_obs_head(store, H, rng);
    register_coupling(store, cfg.coupling_layers, H, rng);
}

struct ModelVars {
    ModelConfig cfg;
    std::map<std::string, ad::Var> leaves;

    ad::Var W_cr, b_cr;
    MlpVars f1, f2;
    ad::Var W_p, W_p_r, W_p_cr, b_p, W_q, b_q;
    ad::Var W_c_h, W_c_x, b_c;
    ad::Var W_f_h, W_f_x, b_f, W_g_h, W_g_x, b_g;
    ad::Var W_r_p, W_r_x, b_r, W_s_q, W_s_x, b_s;
    ad::Var W_o_h, W_o_x, b_o, W_y, b_y;
    ObsHeadVars u;
    CouplingVars coupling;
};

inline ModelVars model_vars(const ParameterStore& store, const ModelConfig& cfg) {
    ModelVars m;
    m.cfg = cfg;
    m.leaves = store.make_leaves();
    const auto& L = m.leaves;
    m.W_cr = L.at("W_cr");
    m.b_cr = L.at("b_cr");
    m.f1 = mlp_vars(L, "f1");
    m.f2 = mlp_vars(L, "f2");
    m.W_p = L.at("W_p");
    m.W_p_r = L.at("W_p_r");
    m.W_p_cr = L.at("W_p_cr");
    m.b_p = L.at("b_p");
    m.W_q = L.at("W_q");
    m.b_q = L.at("b_q");
    m.W_c_h = L.at("W_c_h");
    m.W_c_x = L.at("W_c_x");
    m.b_c = L.at("b_c");
    m.W_f_h = L.at("W_f_h");
    m.W_f_x = L.at("W_f_x");
    m.b_f = L.at("b_f");
    m.W_g_h = L.at("W_g_h");
    m.W_g_x = L.at("W_g_x");
    m.b_g = L.at("b_g");
    m.W_r_p = L.at("W_r_p");
    m.W_r_x = L.at("W_r_x");
    m.b_r = L.at("b_r");
    m.W_s_q = L.at("W_s_q");
    m.W_s_x = L.at("W_s_x");
    m.b_s = L.at("b_s");
    m.W_o_h = L.at("W_o_h");
    m.W_o_x = L.at("W_o_x");
    m.b_o = L.at("b_o");
    m.W_y = L.at("W_y");
    m.b_y = L.at("b_y");
    m.u = obs_head_vars(L);
    m.coupling = coupling_vars(L, cfg.coupling_layers, cfg.clamp_bound);
    return m;
}

// Network state at one time step.
struct State {
    std::vector<ad::Var> c;   // per segment
    std::vector<ad::Var> h;   // per segment
    std::vector<ad::Var> cr;  // per reservoir
    int t = 0;

    // Replaces every entry with a constant holding the same value, freeing
    // the recorded history. Evaluation rollouts call this every step.
    void detach() {
        for (auto& v : c) v = v.detach();
        for (auto& v : h) v = v.detach();
        for (auto& v : cr) v = v.detach();
    }
};

inline State zero_state(const HeteroGraph& g, int hidden) {
    State s;
    const ad::Var z = ad::Var::constant(Matrix::Zero(hidden, 1));
    s.c.assign(g.n_segments(), z);
    s.h.assign(g.n_segments(), z);
    s.cr.assign(g.n_reservoirs(), z);
    return s;
}

// --- Cell pieces, exposed individually for testing ---

// cr_k^t = tanh(W_cr cr_k^{t-1} + f1(l_k) (x) sum_{i in S(k)} A_ik h_i^{t-1} + b_cr)
inline ad::Var reservoir_state_update(const ModelVars& m, const ad::Var& cr_prev,
                                      const std::vector<std::pair<double, ad::Var>>& upstream_h,
                                      const ad::Var& l_k) {
    ad::Var pre = ad::affine(m.W_cr, cr_prev, m.b_cr);
    if (!upstream_h.empty()) {
        const ad::Var mixed = ad::cmul(m.f1.apply(l_k), ad::weighted_sum(upstream_h));
        pre = ad::add(pre, mixed);
    }
    return ad::tanh(pre);
}

struct ReservoirTerm {
    double weight;  // A_ki
    ad::Var release_prev;
    ad::Var cr_prev;
    ad::Var l;
};

// p_i^{t-1} = tanh(W_p sum_{k in M(i)} A_ki f2(l_k) (x) (W_p^r r_k + W_p^cr cr_k) + b_p)
// Empty M(i) yields the zero vector (no upstream reservoir, no signal).
inline ad::Var reservoir_transfer(const ModelVars& m,
                                  const std::vector<ReservoirTerm>& terms) {
    if (terms.empty()) return ad::Var::constant(Matrix::Zero(m.cfg.hidden, 1));
    std::vector<std::pair<double, ad::Var>> weighted;
    weighted.reserve(terms.size());
    for (const auto& t : terms) {
        if (t.release_prev.rows() != m.cfg.release_dim)
            throw std::invalid_argument(
                "reservoir_transfer: release vector has arity " +
                std::to_string(t.release_prev.rows()) + ", expected " +
                std::to_string(m.cfg.release_dim));
        const ad::Var inner = ad::affine_sum(
            {{m.W_p_r, t.release_prev}, {m.W_p_cr, t.cr_prev}},
            ad::Var::constant(Matrix::Zero(m.cfg.hidden, 1)));
        weighted.emplace_back(t.weight, ad::cmul(m.f2.apply(t.l), inner));
    }
    return ad::tanh(ad::affine(m.W_p, ad::weighted_sum(weighted), m.b_p));
}

// q_i^{t-1} = tanh(W_q sum_{j in N(i)} A_ji h_j^{t-1} + b_q); zero when N(i) empty.
inline ad::Var upstream_transfer(const ModelVars& m,
                                 const std::vector<std::pair<double, ad::Var>>& upstream_h) {
    if (upstream_h.empty()) return ad::Var::constant(Matrix::Zero(m.cfg.hidden, 1));
    return ad::tanh(ad::affine(m.W_q, ad::weighted_sum(upstream_h), m.b_q));
}

struct Gates {
    ad::Var cbar, gf, gi, gr, gs;
};

inline Gates gates_and_candidate(const ModelVars& m, const ad::Var& h_prev,
                                 const ad::Var& x_t, const ad::Var& p_prev,
                                 const ad::Var& q_prev) {
    Gates g;
    g.cbar = ad::tanh(ad::affine_sum({{m.W_c_h, h_prev}, {m.W_c_x, x_t}}, m.b_c));
    g.gf = ad::sigmoid(ad::affine_sum({{m.W_f_h, h_prev}, {m.W_f_x, x_t}}, m.b_f));
    g.gi = ad::sigmoid(ad::affine_sum({{m.W_g_h, h_prev}, {m.W_g_x, x_t}}, m.b_g));
    g.gr = ad::sigmoid(ad::affine_sum({{m.W_r_p, p_prev}, {m.W_r_x, x_t}}, m.b_r));
    g.gs = ad::sigmoid(ad::affine_sum({{m.W_s_q, q_prev}, {m.W_s_x, x_t}}, m.b_s));
    return g;
}

// Full: c^t = tanh(gf(x)c + gi(x)cbar + gr(x)p + gs(x)q); pretrain drops the gr(x)p term.
inline ad::Var cell_update(const ad::Var& c_prev, const Gates& g, const ad::Var& p_prev,
                           const ad::Var& q_prev, Mode mode) {
    ad::Var acc = ad::add(ad::cmul(g.gf, c_prev), ad::cmul(g.gi, g.cbar));
    if (mode == Mode::Full) acc = ad::add(acc, ad::cmul(g.gr, p_prev));
    acc = ad::add(acc, ad::cmul(g.gs, q_prev));
    return ad::tanh(acc);
}

struct HeadOutput {
    ad::Var h, y, o;
};

inline ad::Var predict_from_hidden(const ModelVars& m, const ad::Var& h) {
    return ad::affine(m.W_y, h, m.b_y);
}

inline HeadOutput hidden_and_predict(const ModelVars& m, const ad::Var& c_t,
                                     const ad::Var& h_prev, const ad::Var& x_t,
                                     Head head) {
    HeadOutput out;
    out.o = ad::sigmoid(ad::affine_sum({{m.W_o_h, h_prev}, {m.W_o_x, x_t}}, m.b_o));
    if (head == Head::Gated) {
        out.h = ad::cmul(out.o, c_t);
    } else {
        if (m.cfg.hidden % 2 != 0)
            throw std::invalid_argument("coupling head requires an even hidden dimension");
        out.h = coupling_forward(c_t, out.o, m.coupling);
    }
    out.y = predict_from_hidden(m, out.h);
    return out;
}

// --- Whole-network step and sequence ---

struct SequenceInputs {
    std::vector<std::vector<Vector>> x;  // [t][segment], driver vectors
    std::vector<std::vector<Vector>> r;  // [t][reservoir], release vectors
    std::vector<Vector> l;               // [reservoir], static meta-features

    int steps() const { return static_cast<int>(x.size()); }
};

struct StepOutput {
    State state;
    std::vector<ad::Var> y;  // per segment, 1x1
    std::vector<ad::Var> o;  // per segment, output gates (kept for assimilation)
};

// One time step over the whole graph. All cross-node reads are t-1 values,
// so evaluation order within the step does not matter.
inline StepOutput step_network(const HeteroGraph& g, const NeighborIndex& nbr,
                               const ModelVars& m, const State& prev,
                               const std::vector<ad::Var>& x_t,
                               const std::vector<ad::Var>& r_prev,
                               const std::vector<ad::Var>& l, Mode mode, Head head) {
    if (static_cast<int>(prev.c.size()) != g.n_segments() ||
        static_cast<int>(prev.cr.size()) != g.n_reservoirs())
        throw std::invalid_argument("step_network: state does not match graph size");

    StepOutput out;
    out.state.t = prev.t + 1;
    out.state.cr.resize(g.n_reservoirs());
    out.state.c.resize(g.n_segments());
    out.state.h.resize(g.n_segments());
    out.y.resize(g.n_segments());
    out.o.resize(g.n_segments());

    for (int k = 0; k < g.n_reservoirs(); ++k) {
        std::vector<std::pair<double, ad::Var>> inflow;
        for (const auto& in : nbr.reservoir_inflows[k])
            inflow.emplace_back(in.weight, prev.h[in.node]);
        out.state.cr[k] = reservoir_state_update(m, prev.cr[k], inflow, l[k]);
    }

    for (int i = 0; i < g.n_segments(); ++i) {
        std::vector<ReservoirTerm> res_terms;
        for (const auto& in : nbr.upstream_reservoirs[i])
            res_terms.push_back({in.weight, r_prev[in.node], prev.cr[in.node], l[in.node]});
        const ad::Var p = reservoir_transfer(m, res_terms);

        std::vector<std::pair<double, ad::Var>> up;
        for (const auto& in : nbr.upstream_segments[i])
            up.emplace_back(in.weight, prev.h[in.node]);
        const ad::Var q = upstream_transfer(m, up);

        const Gates gates = gates_and_candidate(m, prev.h[i], x_t[i], p, q);
        out.state.c[i] = cell_update(prev.c[i], gates, p, q, mode);
        HeadOutput ho = hidden_and_predict(m, out.state.c[i], prev.h[i], x_t[i], head);
        out.state.h[i] = ho.h;
        out.y[i] = ho.y;
        out.o[i] = ho.o;
    }
    return out;
}

struct RolloutResult {
    std::vector<std::vector<ad::Var>> y;  // [t][segment]
    State final_state;
};

inline std::vector<ad::Var> to_vars(const std::vector<Vector>& vs) {
    std::vector<ad::Var> out;
    out.reserve(vs.size());
    for (const auto& v : vs) out.push_back(ad::Var::constant(v));
    return out;
}

// Plain unroll, no assimilation. detach_states frees the tape step by step
// (evaluation only; keep it false when gradients are needed).
inline RolloutResult forward_sequence(const HeteroGraph& g, const NeighborIndex& nbr,
                                      const ModelVars& m, const SequenceInputs& in,
                                      Mode mode, Head head, bool detach_states = false,
                                      const State* warm_start = nullptr) {
    const int T = in.steps();
    if (T < 1) throw std::invalid_argument("forward_sequence: empty input sequence");
    State state = warm_start ? *warm_start : zero_state(g, m.cfg.hidden);
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
