#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ewclab/datagen.hpp"
#include "ewclab/model.hpp"
#include "ewclab/training.hpp"

namespace ewclab {

// Signed integer from a sign token followed by zero-padded digit tokens.
std::int64_t decode_numeral(std::span<const int> tokens);

enum class LnRmseMode {
    LogOfRmse,  // ln(max(RMSE, 1e-8)), the default
    RmseOfLog,  // RMSE of sign(x) * ln(1 + |x|)
};

inline constexpr double kLnRmseFloor = 1e-8;

double ln_rmse(std::span<const std::int64_t> preds, std::span<const std::int64_t> truths,
               LnRmseMode mode = LnRmseMode::LogOfRmse);

// Mean per-instance MLM loss; params are not modified.
double heldout_mlm_loss(const ModelParams& params, std::span<const TokenSeq> corpus, std::size_t batch_size = 64);

struct DecodedSample {
    std::int64_t a = 0;
    Op op = Op::Add;
    std::int64_t b = 0;
    std::int64_t truth = 0;
    std::int64_t prediction = 0;

    friend bool operator==(const DecodedSample&, const DecodedSample&) = default;
};

struct ArithEval {
    double ln_rmse = 0.0;
    std::vector<DecodedSample> samples;
};

ArithEval evaluate_arith(const ModelParams& params, std::span<const ArithInstance> data,
                         LnRmseMode mode = LnRmseMode::LogOfRmse);

struct EvalReport {
    AggregateMetric ln_rmse;
    std::map<std::string, AggregateMetric> heldout_mlm_loss;  // per task
    std::vector<DecodedSample> samples;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

} // namespace ewclab

namespace ewclab {

struct TsneConfig {
    double perplexity = 30.0;  // capped at (N - 1) / 3
    int iters = 1000;
    double learning_rate = 200.0;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    int momentum_switch_iter = 250;
    double exaggeration = 12.0;
    int exaggeration_iters = 250;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const TsneConfig&, const TsneConfig&) = default;
};

// Row-major N x dim points with one task label each.
struct ParamPointSet {
    std::size_t dim = 0;
    std::vector<double> points;
    std::vector<std::string> labels;
    int layer = 0;

    std::size_t size() const { return labels.size(); }
    const double* row(std::size_t i) const { return points.data() + i * dim; }
};

// One point per attention neuron of encoder block `layer`: the incoming
// weight vector (a column of the stored [in, out] matrix) of every output
// unit of Q, K, V and O. Ordered by task name, matrix name, neuron index.
ParamPointSet collect_layer_points(const std::map<std::string, ModelParams>& checkpoints, int layer);

struct TsneResult {
    std::size_t n = 0;
    std::vector<double> coords;  // n x 2
    double perplexity = 0.0;     // after capping
    std::vector<double> point_perplexity;  // calibrated exp(H_i)
    double kl_initial = 0.0;  // first iteration without exaggeration
    double kl_final = 0.0;
};

// Exact O(N^2) t-SNE with per-point bandwidth bisection, early exaggeration,
// momentum and per-coordinate gains.
TsneResult tsne(const ParamPointSet& points, const TsneConfig& cfg);

// Mean silhouette coefficient of an n x dim embedding under the labels.
double silhouette(std::span<const double> coords, std::size_t dim, std::span<const std::string> labels);

} // namespace ewclab
