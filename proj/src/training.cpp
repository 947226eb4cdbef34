#include "ewclab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "ewclab/error.hpp"
#include "ewclab/parallel.hpp"

namespace ewclab {
namespace {

// Anchor and Fisher split into tensors matching the parameter entries.
struct PenaltyTerms {
    std::vector<Tensor> ref;
    std::vector<Tensor> fisher;
};

PenaltyTerms split_terms(const EwcConfig& ewc) {
    PenaltyTerms t;
    std::size_t off = 0;
    for (const auto& e : ewc.ref_params.entries) {
        t.ref.push_back(Tensor(e.tensor.shape, e.tensor.data));
        const auto first = ewc.fisher.values.begin() + static_cast<std::ptrdiff_t>(off);
        t.fisher.push_back(Tensor(e.tensor.shape, std::vector<double>(first, first + static_cast<std::ptrdiff_t>(e.tensor.size()))));
        off += e.tensor.size();
    }
    return t;
}

Var penalty_from_terms(Graph& g, const BoundParams& p, const PenaltyTerms& terms, double lambda) {
    if (p.vars.size() != terms.ref.size()) fail(ErrorKind::InvalidInput, "ewc: parameter layout mismatch");
    std::optional<Var> total;
    for (std::size_t i = 0; i < p.vars.size(); ++i) {
        if (g.shape(p.vars[i]) != terms.ref[i].shape) fail(ErrorKind::InvalidInput, "ewc: tensor shape mismatch");
        const Var d = g.sub(p.vars[i], g.input(terms.ref[i]));
        const Var s = g.sum(g.mul(g.mul(d, d), g.input(terms.fisher[i])));
        total = total ? g.add(*total, s) : s;
    }
    return g.scale(*total, lambda / 2.0);
}

class Optimizer {
public:
    Optimizer(const OptConfig& opt, std::size_t n) : opt_(opt), m_(n, 0.0), v_(n, 0.0) {}

    void step(ModelParams& params) {
        ++t_;
        const double b1 = opt_.adam_beta1, b2 = opt_.adam_beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        std::size_t off = 0;
        for (auto& e : params.entries) {
            Tensor& t = e.tensor;
            if (t.has_grad()) {
                for (std::size_t i = 0; i < t.size(); ++i) {
                    const double g = t.grad[i];
                    if (opt_.algorithm == Algorithm::Sgd) {
                        t.data[i] -= opt_.lr * g;
                        continue;
                    }
                    double& m = m_[off + i];
                    double& v = v_[off + i];
                    m = b1 * m + (1.0 - b1) * g;
                    v = b2 * v + (1.0 - b2) * g * g;
                    t.data[i] -= opt_.lr * (m / c1) / (std::sqrt(v / c2) + opt_.adam_eps);
                }
            }
            off += t.size();
        }
    }

private:
    OptConfig opt_;
    std::vector<double> m_, v_;
    std::size_t t_ = 0;
};

TrainResult run_training(ModelParams params, std::span<const TokenSeq> dataset, const OptConfig& opt,
                         const EwcConfig* ewc, const StepObserver& observe) {
    opt.validate();
    if (dataset.empty()) fail(ErrorKind::InvalidInput, "training dataset is empty");
    std::optional<PenaltyTerms> terms;
    if (ewc) {
        ewc->validate(params);
        terms = split_terms(*ewc);
    }
    const auto started = std::chrono::steady_clock::now();
    params.set_requires_grad(true);
    params.zero_grad();
    Optimizer optimizer(opt, params.flat_len());

    LossTrace trace;
    trace.lambda = ewc ? ewc->lambda : 0.0;
    trace.seed = opt.seed;

    std::vector<std::size_t> order(dataset.size());
    std::vector<TokenSeq> batch;
    std::size_t iteration = 0;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::seed_seq sseq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                           static_cast<std::uint32_t>(epoch)};
        std::mt19937_64 rng(sseq);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
            const std::size_t end = std::min(order.size(), start + opt.batch_size);
            batch.clear();
            for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);

            Graph g;
            const BoundParams bound = bind(g, params);
            const Var ce = mlm_loss(g, bound, batch);
            Var total = ce;
            double penalty = 0.0;
            if (terms) {
                const Var pen = penalty_from_terms(g, bound, *terms, ewc->lambda);
                penalty = g.value(pen).item();
                total = g.add(ce, pen);
            }
            g.backward(total);
            optimizer.step(params);
            params.zero_grad();

            ++iteration;
            const double ce_value = g.value(ce).item();
            trace.records.push_back({iteration, ce_value, penalty, g.value(total).item()});
            if (observe) observe(iteration, params);
        }
    }
    params.set_requires_grad(false);
    trace.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    return {std::move(params), std::move(trace)};
}

} // namespace

std::string to_string(Algorithm a) { return a == Algorithm::Adam ? "adam" : "sgd"; }

Algorithm algorithm_from_string(const std::string& s) {
    if (s == "adam") return Algorithm::Adam;
    if (s == "sgd") return Algorithm::Sgd;
    fail(ErrorKind::Config, "unknown optimizer '" + s + "' (expected adam or sgd)");
}

void OptConfig::validate() const {
    if (!(lr >= 0.0)) fail(ErrorKind::Config, "lr must be >= 0");
    if (batch_size < 1) fail(ErrorKind::Config, "batch_size must be >= 1");
    if (epochs < 1) fail(ErrorKind::Config, "epochs must be >= 1");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        fail(ErrorKind::Config, "adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail(ErrorKind::Config, "adam_eps must be positive");
}

void EwcConfig::validate(const ModelParams& params) const {
    if (!(lambda >= 0.0)) fail(ErrorKind::InvalidInput, "ewc lambda must be >= 0");
    if (fisher.values.size() != ref_params.flat_len())
        fail(ErrorKind::InvalidInput, "fisher length " + std::to_string(fisher.values.size()) +
                                          " does not match anchor length " + std::to_string(ref_params.flat_len()));
    if (ref_params.flat_len() != params.flat_len() || ref_params.entries.size() != params.entries.size())
        fail(ErrorKind::InvalidInput, "ewc anchor layout does not match the trained parameters");
}

bool LossTrace::same_run(const LossTrace& o) const {
    return records == o.records && lambda == o.lambda && seed == o.seed && dataset_id == o.dataset_id;
}

AggregateMetric aggregate(std::span<const double> values) {
    if (values.empty()) fail(ErrorKind::InvalidInput, "aggregate of no values");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, values.size() == 1 ? 0.0 : std::sqrt(ss / n), values.size()};
}

Var ewc_penalty(Graph& g, const BoundParams& p, const EwcConfig& ewc) {
    if (!(ewc.lambda >= 0.0)) fail(ErrorKind::InvalidInput, "ewc lambda must be >= 0");
    if (ewc.fisher.values.size() != ewc.ref_params.flat_len())
        fail(ErrorKind::InvalidInput, "fisher length does not match anchor");
    PenaltyTerms terms = split_terms(ewc);
    if (p.vars.size() != terms.ref.size()) fail(ErrorKind::InvalidInput, "ewc: parameter layout mismatch");
    std::optional<Var> total;
    for (std::size_t i = 0; i < p.vars.size(); ++i) {
        if (g.shape(p.vars[i]) != terms.ref[i].shape) fail(ErrorKind::InvalidInput, "ewc: tensor shape mismatch");
        const Var d = g.sub(p.vars[i], g.constant(std::move(terms.ref[i])));
        const Var s = g.sum(g.mul(g.mul(d, d), g.constant(std::move(terms.fisher[i]))));
        total = total ? g.add(*total, s) : s;
    }
    return g.scale(*total, ewc.lambda / 2.0);
}

double ewc_penalty(const ModelParams& params, const EwcConfig& ewc) {
    ewc.validate(params);
    Graph g;
    const BoundParams b = bind_const(g, params);
    return g.value(ewc_penalty(g, b, ewc)).item();
}

double fisher_distance(const ModelParams& params, const ModelParams& ref, const FisherVector& fisher) {
    const auto a = params.flatten();
    const auto b = ref.flatten();
    if (a.size() != b.size() || a.size() != fisher.values.size())
        fail(ErrorKind::InvalidInput, "fisher_distance length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += fisher.values[i] * (a[i] - b[i]) * (a[i] - b[i]);
    return s;
}

TrainResult train(ModelParams params, std::span<const TokenSeq> dataset, const OptConfig& opt,
                  const StepObserver& observe) {
    return run_training(std::move(params), dataset, opt, nullptr, observe);
}

TrainResult train_ewc(ModelParams params, std::span<const TokenSeq> dataset, const OptConfig& opt,
                      const EwcConfig& ewc, const StepObserver& observe) {
    return run_training(std::move(params), dataset, opt, &ewc, observe);
}

std::vector<SweepRun> lambda_sweep(const ModelParams& params, std::span<const TokenSeq> dataset,
                                   const OptConfig& opt, const ModelParams& ref_params,
                                   const FisherVector& fisher, std::span<const double> grid) {
    if (grid.empty()) fail(ErrorKind::InvalidInput, "lambda grid is empty");
    for (double l : grid)
        if (!(l >= 0.0)) fail(ErrorKind::InvalidInput, "lambda grid values must be >= 0");
    std::vector<SweepRun> runs(grid.size());
    parallel_for(grid.size(), [&](std::size_t i) {
        EwcConfig ewc{grid[i], ref_params, fisher};
        auto [p, trace] = train_ewc(params, dataset, opt, ewc);
        runs[i] = SweepRun{grid[i], std::move(trace), std::move(p)};
    });
    return runs;
}

std::vector<double> log_grid(double hi, double lo, std::size_t points) {
    if (!(hi > 0.0 && lo > 0.0) || points < 1) fail(ErrorKind::InvalidInput, "log_grid needs positive bounds");
    if (points == 1) return {hi};
    std::vector<double> g(points);
    const double a = std::log10(hi), b = std::log10(lo);
    for (std::size_t i = 0; i < points; ++i)
        g[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) / static_cast<double>(points - 1));
    return g;
}

double head_ce(const LossTrace& t, std::size_t window) {
    if (t.records.empty()) fail(ErrorKind::InvalidInput, "empty loss trace");
    const std::size_t n = std::min(window, t.records.size());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += t.records[i].ce_loss;
    return s / static_cast<double>(n);
}

double tail_ce(const LossTrace& t, std::size_t window) {
    if (t.records.empty()) fail(ErrorKind::InvalidInput, "empty loss trace");
    const std::size_t n = std::min(window, t.records.size());
    double s = 0.0;
    for (std::size_t i = t.records.size() - n; i < t.records.size(); ++i) s += t.records[i].ce_loss;
    return s / static_cast<double>(n);
}

double select_lambda(std::span<const SweepRun> runs, double reference_tail_ce, double ratio, std::size_t window) {
    if (runs.empty()) fail(ErrorKind::InvalidInput, "no sweep runs to select from");
    std::vector<const SweepRun*> sorted;
    for (const auto& r : runs) sorted.push_back(&r);
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->lambda > b->lambda; });
    for (const SweepRun* r : sorted)
        if (tail_ce(r->trace, window) <= ratio * reference_tail_ce) return r->lambda;
    return sorted.back()->lambda;
}

} // namespace ewclab
