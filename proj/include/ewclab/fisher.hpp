#pragma once

// Diagonal empirical Fisher information:
//   F_i = (1/N) sum_n (d log f(y_n; theta) / d theta_i)^2
// with per-instance gradients at the observed targets (batch size one).

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ewclab/graph.hpp"
#include "ewclab/model.hpp"

namespace ewclab {

struct FisherVector {
    std::vector<double> values;
    std::size_t n_samples = 0;
    std::string task_label;

    friend bool operator==(const FisherVector&, const FisherVector&) = default;
};

struct VitalSet {
    int layer = 0;
    std::vector<std::size_t> indices;  // flat indices, descending score
    std::string source_task;
};

// Builds the negative log-likelihood of sample `index` on `g`, with the
// leaves bound via g.param(). Returned Var must be scalar.
using NllBuilder = std::function<Var(Graph& g, std::size_t index)>;

// Model-free estimator: squares and averages the gradients that each
// per-sample backward pass leaves on `leaves`. Leaf grads are cleared
// before and after; leaf data is untouched.
std::vector<double> estimate_diag_fisher(std::span<Tensor* const> leaves, std::size_t n_samples,
                                         const NllBuilder& nll);

// Samples n_samples instances from data with replacement (deterministic per
// seed). Work is split into fixed-size shards reduced in shard order, so the
// result is identical for any EWCLAB_THREADS.
FisherVector estimate_diag_fisher(const ModelParams& params, std::span<const TokenSeq> data,
                                  std::size_t n_samples, std::uint64_t seed, std::string task_label = {});

VitalSet top_n_vital(const FisherVector& fisher, const ModelParams& layout, int layer, std::size_t n,
                     std::string source_task = {});

struct SensitivityTable {
    int layer = 0;
    std::vector<std::string> tasks;
    std::vector<std::size_t> indices;
    std::vector<std::vector<double>> scores;  // scores[row][task]

    std::size_t column(const std::string& task) const;
    // Share of rows where task a scores strictly above task b.
    double fraction_greater(const std::string& a, const std::string& b) const;
};

SensitivityTable sensitivity_compare(const VitalSet& vital, const std::map<std::string, FisherVector>& by_task);

// Min-max scaled copy in [0, 1] for plotting; constant input maps to zeros.
FisherVector min_max_normalized(const FisherVector& f);

} // namespace ewclab
