#pragma once

// One-hidden-layer fully connected block, the building unit for the
// reservoir feature filters (f1, f2) and the coupling functions (s*, g*).

#include <hrgn/autodiff.hpp>
#include <hrgn/params.hpp>

#include <map>
#include <random>
#include <string>

namespace hrgn {

struct MlpVars {
    ad::Var w1, b1, w2, b2;

    ad::Var apply(const ad::Var& x) const {
        return ad::affine(w2, ad::tanh(ad::affine(w1, x, b1)), b2);
    }
};

inline void register_mlp(ParameterStore& store, const std::string& prefix,
                         Eigen::Index in, Eigen::Index hidden, Eigen::Index out,
                         std::mt19937_64& rng) {
    store.add_uniform(prefix + ".W1", hidden, in, in, rng);
    store.add_zeros(prefix + ".b1", hidden);
    store.add_uniform(prefix + ".W2", out, hidden, hidden, rng);
    store.add_zeros(prefix + ".b2", out);
}

inline MlpVars mlp_vars(const std::map<std::string, ad::Var>& leaves,
                        const std::string& prefix) {
    return {leaves.at(prefix + ".W1"), leaves.at(prefix + ".b1"),
            leaves.at(prefix + ".W2"), leaves.at(prefix + ".b2")};
}

}  // namespace hrgn
