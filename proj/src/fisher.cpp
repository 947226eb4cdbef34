#include "ewclab/fisher.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "ewclab/error.hpp"
#include "ewclab/parallel.hpp"

namespace ewclab {
namespace {

constexpr std::size_t kShardSize = 64;

// Raw sum of squared per-sample gradients.
std::vector<double> sum_sq_grads(std::span<Tensor* const> leaves, std::size_t n_samples, const NllBuilder& nll) {
    std::size_t total = 0;
    for (Tensor* t : leaves) {
        t->zero_grad();
        total += t->size();
    }
    std::vector<double> acc(total, 0.0);
    for (std::size_t s = 0; s < n_samples; ++s) {
        {
            Graph g;
            const Var loss = nll(g, s);
            g.backward(loss);
        }
        std::size_t off = 0;
        for (Tensor* t : leaves) {
            if (t->has_grad())
                for (std::size_t i = 0; i < t->size(); ++i) acc[off + i] += t->grad[i] * t->grad[i];
            t->zero_grad();
            off += t->size();
        }
    }
    return acc;
}

} // namespace

std::vector<double> estimate_diag_fisher(std::span<Tensor* const> leaves, std::size_t n_samples,
                                         const NllBuilder& nll) {
    if (n_samples < 1) fail(ErrorKind::InvalidInput, "fisher needs at least one sample");
    std::vector<double> acc = sum_sq_grads(leaves, n_samples, nll);
    const double inv = 1.0 / static_cast<double>(n_samples);
    for (double& v : acc) v *= inv;
    return acc;
}

FisherVector estimate_diag_fisher(const ModelParams& params, std::span<const TokenSeq> data,
                                  std::size_t n_samples, std::uint64_t seed, std::string task_label) {
    if (data.empty()) fail(ErrorKind::InvalidInput, "fisher estimation over empty data");
    if (n_samples < 1) fail(ErrorKind::InvalidInput, "fisher needs at least one sample");
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> pick(0, data.size() - 1);
    std::vector<std::size_t> chosen(n_samples);
    for (auto& c : chosen) c = pick(rng);

    const std::size_t shards = (n_samples + kShardSize - 1) / kShardSize;
    std::vector<std::vector<double>> partial(shards);
    parallel_for(shards, [&](std::size_t shard) {
        ModelParams local = params;
        local.zero_grad();
        local.set_requires_grad(true);
        std::vector<Tensor*> leaves;
        for (auto& e : local.entries) leaves.push_back(&e.tensor);
        const std::size_t begin = shard * kShardSize;
        const std::size_t count = std::min(kShardSize, n_samples - begin);
        partial[shard] = sum_sq_grads(leaves, count, [&](Graph& g, std::size_t i) {
            const BoundParams b = bind(g, local);
            return mlm_nll_sum(g, b, data[chosen[begin + i]]);
        });
    });

    FisherVector f;
    f.values.assign(params.flat_len(), 0.0);
    for (const auto& p : partial)
        for (std::size_t i = 0; i < p.size(); ++i) f.values[i] += p[i];
    const double inv = 1.0 / static_cast<double>(n_samples);
    for (double& v : f.values) v *= inv;
    f.n_samples = n_samples;
    f.task_label = std::move(task_label);
    return f;
}

VitalSet top_n_vital(const FisherVector& fisher, const ModelParams& layout, int layer, std::size_t n,
                     std::string source_task) {
    if (fisher.values.size() != layout.flat_len())
        fail(ErrorKind::InvalidInput, "fisher length does not match the model layout");
    const auto [begin, end] = layout.layer_range(layer);
    if (n > end - begin)
        fail(ErrorKind::InvalidInput, "n=" + std::to_string(n) + " exceeds layer size " + std::to_string(end - begin));
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const auto& v = fisher.values;
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n), idx.end(),
                      [&](std::size_t a, std::size_t b) { return v[a] != v[b] ? v[a] > v[b] : a < b; });
    idx.resize(n);
    return VitalSet{layer, std::move(idx), std::move(source_task)};
}

std::size_t SensitivityTable::column(const std::string& task) const {
    const auto it = std::find(tasks.begin(), tasks.end(), task);
    if (it == tasks.end()) fail(ErrorKind::InvalidInput, "no task column '" + task + "'");
    return static_cast<std::size_t>(it - tasks.begin());
}

double SensitivityTable::fraction_greater(const std::string& a, const std::string& b) const {
    if (indices.empty()) return 0.0;
    const std::size_t ca = column(a), cb = column(b);
    std::size_t count = 0;
    for (const auto& row : scores)
        if (row[ca] > row[cb]) ++count;
    return static_cast<double>(count) / static_cast<double>(indices.size());
}

SensitivityTable sensitivity_compare(const VitalSet& vital, const std::map<std::string, FisherVector>& by_task) {
    if (by_task.empty()) fail(ErrorKind::InvalidInput, "no fisher vectors to compare");
    const std::size_t len = by_task.begin()->second.values.size();
    for (const auto& [task, f] : by_task)
        if (f.values.size() != len) fail(ErrorKind::InvalidInput, "fisher vector for '" + task + "' has mismatched length");
    SensitivityTable t;
    t.layer = vital.layer;
    for (const auto& [task, f] : by_task) t.tasks.push_back(task);
    for (std::size_t idx : vital.indices) {
        if (idx >= len) fail(ErrorKind::InvalidInput, "vital index outside fisher vector");
        std::vector<double> row;
        for (const auto& [task, f] : by_task) row.push_back(f.values[idx]);
        t.indices.push_back(idx);
        t.scores.push_back(std::move(row));
    }
    return t;
}

FisherVector min_max_normalized(const FisherVector& f) {
    FisherVector out = f;
    if (f.values.empty()) return out;
    const auto [lo, hi] = std::minmax_element(f.values.begin(), f.values.end());
    const double range = *hi - *lo;
    for (double& v : out.values) v = range > 0.0 ? (v - *lo) / range : 0.0;
    return out;
}

} // namespace ewclab
