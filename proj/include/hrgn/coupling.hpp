#pragma once

// Invertible affine coupling stack mapping the cell state c to the hidden
// representation h, conditioned on the output gate vector o. The inverse is
// closed-form; the log-scale inputs are clamped symmetrically on both paths
// so round trips are exact to floating-point precision.

#include <hrgn/autodiff.hpp>
#include <hrgn/nn.hpp>
#include <hrgn/params.hpp>

#include <map>
#include <random>
#include <string>
#include <vector>

namespace hrgn {

struct CouplingLayerVars {
    MlpVars s1, s2, g1, g2;
};

struct CouplingVars {
    std::vector<CouplingLayerVars> layers;
    double clamp_bound = 5.0;
};

inline void register_coupling(ParameterStore& store, int n_layers, int hidden_dim,
                              std::mt19937_64& rng) {
    if (hidden_dim % 2 != 0)
        throw std::invalid_argument("coupling stack requires an even hidden dimension");
    const int half = hidden_dim / 2;
    const int in = half + hidden_dim;  // [half-state, o]
    for (int l = 0; l < n_layers; ++l) {
        const std::string p = "cpl" + std::to_string(l);
        register_mlp(store, p + ".s1", in, hidden_dim, half, rng);
        register_mlp(store, p + ".s2", in, hidden_dim, half, rng);
        register_mlp(store, p + ".g1", in, hidden_dim, half, rng);
        register_mlp(store, p + ".g2", in, hidden_dim, half, rng);
    }
}

inline CouplingVars coupling_vars(const std::map<std::string, ad::Var>& leaves,
                                  int n_layers, double clamp_bound = 5.0) {
    CouplingVars cv;
    cv.clamp_bound = clamp_bound;
    for (int l = 0; l < n_layers; ++l) {
        const std::string p = "cpl" + std::to_string(l);
        cv.layers.push_back({mlp_vars(leaves, p + ".s1"), mlp_vars(leaves, p + ".s2"),
                             mlp_vars(leaves, p + ".g1"), mlp_vars(leaves, p + ".g2")});
    }
    return cv;
}

inline ad::Var coupling_forward(const ad::Var& c, const ad::Var& o,
                                const CouplingVars& stack) {
    if (c.rows() % 2 != 0)
        throw std::invalid_argument("coupling_forward: odd state dimension");
    ad::Var cur = c;
    for (const auto& layer : stack.layers) {
        auto [c1, c2] = ad::split_half(cur);
        const ad::Var cond1 = ad::concat_rows(c2, o);
        const ad::Var h1 =
            ad::add(ad::cmul(c1, ad::exp_clamped(layer.s1.apply(cond1), stack.clamp_bound)),
                    layer.g1.apply(cond1));
        const ad::Var cond2 = ad::concat_rows(h1, o);
        const ad::Var h2 =
            ad::add(ad::cmul(c2, ad::exp_clamped(layer.s2.apply(cond2), stack.clamp_bound)),
                    layer.g2.apply(cond2));
        cur = ad::concat_rows(h1, h2);
    }
    return cur;
}

inline ad::Var coupling_inverse(const ad::Var& h, const ad::Var& o,
                                const CouplingVars& stack) {
    if (h.rows() % 2 != 0)
        throw std::invalid_argument("coupling_inverse: odd state dimension");
    ad::Var cur = h;
    for (auto it = stack.layers.rbegin(); it != stack.layers.rend(); ++it) {
        auto [h1, h2] = ad::split_half(cur);
        const ad::Var cond2 = ad::concat_rows(h1, o);
        const ad::Var c2 = ad::cdiv(ad::sub(h2, it->g2.apply(cond2)),
                                    ad::exp_clamped(it->s2.apply(cond2), stack.clamp_bound));
        const ad::Var cond1 = ad::concat_rows(c2, o);
        const ad::Var c1 = ad::cdiv(ad::sub(h1, it->g1.apply(cond1)),
                                    ad::exp_clamped(it->s1.apply(cond1), stack.clamp_bound));
        cur = ad::concat_rows(c1, c2);
    }
    return cur;
}

// Observation head u: affine map from a scalar temperature to the hidden space.
struct ObsHeadVars {
    ad::Var w;  // H x 1
    ad::Var b;  // H
};

inline void register_obs_head(ParameterStore& store, int hidden_dim,
                              std::mt19937_64& rng) {
    store.add_uniform("u.W", hidden_dim, 1, 1, rng);
    store.add_zeros("u.b", hidden_dim);
}

inline ObsHeadVars obs_head_vars(const std::map<std::string, ad::Var>& leaves) {
    return {leaves.at("u.W"), leaves.at("u.b")};
}

inline ad::Var observation_to_hidden(const ad::Var& y, const ObsHeadVars& u) {
    return ad::affine(u.w, y, u.b);
}

}  // namespace hrgn
