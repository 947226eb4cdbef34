#pragma once

// Minibatch MLM training, optionally regularized by the elastic weight
// consolidation penalty
//   L(theta) = L_task(theta) + sum_i (lambda / 2) F_i (theta_i - theta*_i)^2

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ewclab/fisher.hpp"
#include "ewclab/graph.hpp"
#include "ewclab/model.hpp"

namespace ewclab {

enum class Algorithm { Adam, Sgd };

std::string to_string(Algorithm a);
Algorithm algorithm_from_string(const std::string& s);

struct OptConfig {
    Algorithm algorithm = Algorithm::Adam;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t batch_size = 32;
    int epochs = 50;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const OptConfig&, const OptConfig&) = default;
};

struct EwcConfig {
    double lambda = 0.0;
    ModelParams ref_params;  // anchor theta*
    FisherVector fisher;     // F over the anchor

    void validate(const ModelParams& params) const;
};

struct LossRecord {
    std::size_t iteration = 0;
    double ce_loss = 0.0;
    double ewc_penalty = 0.0;
    double total_loss = 0.0;

    friend bool operator==(const LossRecord&, const LossRecord&) = default;
};

struct LossTrace {
    std::vector<LossRecord> records;
    double lambda = 0.0;
    std::uint64_t seed = 0;
    std::string dataset_id;
    double wall_clock_seconds = 0.0;

    // Everything except wall-clock time.
    bool same_run(const LossTrace& other) const;
};

struct AggregateMetric {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
    std::size_t n_runs = 0;

    friend bool operator==(const AggregateMetric&, const AggregateMetric&) = default;
};

AggregateMetric aggregate(std::span<const double> values);

// Graph form; gradient w.r.t. theta_i is lambda * F_i * (theta_i - theta*_i).
Var ewc_penalty(Graph& g, const BoundParams& p, const EwcConfig& ewc);
double ewc_penalty(const ModelParams& params, const EwcConfig& ewc);

// sum_i F_i (theta_i - theta*_i)^2, the unscaled consolidation distance.
double fisher_distance(const ModelParams& params, const ModelParams& ref, const FisherVector& fisher);

struct TrainResult {
    ModelParams params;
    LossTrace trace;
};

// Called after every optimizer step with the 1-based iteration.
using StepObserver = std::function<void(std::size_t iteration, const ModelParams& params)>;

TrainResult train(ModelParams params, std::span<const TokenSeq> dataset, const OptConfig& opt,
                  const StepObserver& observe = {});

TrainResult train_ewc(ModelParams params, std::span<const TokenSeq> dataset, const OptConfig& opt,
                      const EwcConfig& ewc, const StepObserver& observe = {});

struct SweepRun {
    double lambda = 0.0;
    LossTrace trace;
    ModelParams params;
};

// One train_ewc run per grid value, all from the same initial params and seed.
std::vector<SweepRun> lambda_sweep(const ModelParams& params, std::span<const TokenSeq> dataset,
                                   const OptConfig& opt, const ModelParams& ref_params,
                                   const FisherVector& fisher, std::span<const double> grid);

// Log-uniform grid from hi down to lo with `points` entries.
std::vector<double> log_grid(double hi, double lo, std::size_t points);

// Mean CE over the first / last `window` records.
double head_ce(const LossTrace& t, std::size_t window);
double tail_ce(const LossTrace& t, std::size_t window);

// Largest lambda whose run converged, meaning its tail CE is at most
// ratio * reference_tail_ce (the tail CE of the unconstrained run). Falls back
// to the smallest lambda when none converged.
double select_lambda(std::span<const SweepRun> runs, double reference_tail_ce, double ratio, std::size_t window);

} // namespace ewclab
