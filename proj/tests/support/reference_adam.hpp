#pragma once

// Independent Adam loop over flat vectors for trajectory comparisons.

#include <cmath>
#include <vector>

#include "ewclab/training.hpp"

namespace ewclab::testing {

// Gradient of the EWC objective on a single fixed instance, computed as the
// CE gradient from the graph plus lambda * F * (theta - theta*) by hand.
inline std::vector<double> ewc_objective_grad(const ModelParams& at, const TokenSeq& seq, const EwcConfig& ewc) {
    ModelParams p = at;
    p.set_requires_grad(true);
    p.zero_grad();
    {
        Graph g;
        const std::vector<TokenSeq> batch{seq};
        g.backward(mlm_loss(g, bind(g, p), batch));
    }
    std::vector<double> grad = p.flat_grad();
    const auto theta = at.flatten();
    const auto anchor = ewc.ref_params.flatten();
    for (std::size_t i = 0; i < grad.size(); ++i)
        grad[i] += ewc.lambda * ewc.fisher.values[i] * (theta[i] - anchor[i]);
    return grad;
}

// Parameters after each of `steps` Adam updates on one instance.
inline std::vector<std::vector<double>> reference_trajectory(const ModelParams& start, const TokenSeq& seq,
                                                             const OptConfig& opt, const EwcConfig& ewc,
                                                             std::size_t steps) {
    ModelParams p = start;
    std::vector<double> theta = p.flatten(), m(theta.size(), 0.0), v(theta.size(), 0.0);
    std::vector<std::vector<double>> out;
    for (std::size_t t = 1; t <= steps; ++t) {
        p.unflatten(theta);
        const auto g = ewc_objective_grad(p, seq, ewc);
        const double c1 = 1.0 - std::pow(opt.adam_beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(opt.adam_beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = opt.adam_beta1 * m[i] + (1.0 - opt.adam_beta1) * g[i];
            v[i] = opt.adam_beta2 * v[i] + (1.0 - opt.adam_beta2) * g[i] * g[i];
            theta[i] -= opt.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt.adam_eps);
        }
        out.push_back(theta);
    }
    return out;
}

} // namespace ewclab::testing
