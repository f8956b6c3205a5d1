#pragma once

// Masked supervised loss over sparse observations, the v∘u reconstruction
// loss for the observation head, and their weighted combination.

#include <hrgn/coupling.hpp>
#include <hrgn/model.hpp>
#include <hrgn/observations.hpp>

#include <stdexcept>
#include <vector>

namespace hrgn {

// Mean squared error over observed (segment, t) pairs only. `preds` is
// [t][segment]; observation times are local to the window (t in [0, T)).
inline ad::Var masked_mse(const std::vector<std::vector<ad::Var>>& preds,
                          const ObservationSet& obs) {
    if (obs.empty())
        throw std::invalid_argument("masked_mse: no observations in window");
    std::vector<ad::Var> selected;
    std::vector<double> targets;
    selected.reserve(obs.size());
    targets.reserve(obs.size());
    for (const auto& r : obs.records) {
        if (r.t < 0 || r.t >= static_cast<int>(preds.size()))
            throw std::out_of_range("masked_mse: observation time outside window");
        selected.push_back(preds[r.t][r.segment]);
        targets.push_back(r.y);
    }
    return ad::scale(ad::sq_diff_sum(selected, targets), 1.0 / static_cast<double>(obs.size()));
}

// Mean over all (i,t) of (y_hat - v(u(y_hat)))^2; v is the linear readout.
inline ad::Var reconstruction_loss(const std::vector<std::vector<ad::Var>>& preds,
                                   const ModelVars& m) {
    std::vector<ad::Var> a, b;
    for (const auto& row : preds) {
        for (const auto& y_hat : row) {
            a.push_back(y_hat);
            b.push_back(predict_from_hidden(m, observation_to_hidden(y_hat, m.u)));
        }
    }
    if (a.empty()) throw std::invalid_argument("reconstruction_loss: no predictions");
    return ad::scale(ad::sq_diff_sum_vars(a, b), 1.0 / static_cast<double>(a.size()));
}

// L = L_supervised + lambda * L_recon.
inline ad::Var total_loss(const std::vector<std::vector<ad::Var>>& preds,
                          const ObservationSet& obs, const ModelVars& m, double lambda) {
    ad::Var l = masked_mse(preds, obs);
    if (lambda != 0.0) l = ad::add(l, ad::scale(reconstruction_loss(preds, m), lambda));
    return l;
}

}  // namespace hrgn
