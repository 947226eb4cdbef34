#pragma once

// The experiment flow behind the CLI commands: data, pretraining, Fisher,
// arithmetic training with and without EWC, the lambda sweep, evaluation,
// sensitivity and t-SNE, and the main results table.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ewclab/config.hpp"
#include "ewclab/fisher.hpp"
#include "ewclab/report.hpp"

namespace ewclab {

using Logger = std::function<void(const std::string&)>;

struct Datasets {
    std::vector<ArithInstance> arith_train, arith_test;
    std::vector<TokenSeq> corpus_a, corpus_b, heldout_a, heldout_b;

    std::vector<TokenSeq> general() const;  // corpus_a followed by corpus_b
    std::vector<TokenSeq> arith_train_seqs() const;
};

Datasets make_datasets(const DataConfig& c);
// data/{arith_train,arith_test,corpus_a,corpus_b,heldout_a,heldout_b}.jsonl
void write_datasets(const Datasets& d, const std::filesystem::path& dir);

// Tasks with Fisher estimates: "general" (A and B), "A", "B", "arith".
inline const std::vector<std::string> kFisherTasks{"general", "A", "B", "arith"};
FisherVector task_fisher(const ModelParams& params, const Datasets& d, const std::string& task, std::size_t n_samples,
                         std::uint64_t seed);

ModelParams pretrain(const RunConfig& seeded, const Datasets& d, LossTrace* trace = nullptr);

// Plain training when ewc is null.
TrainResult train_arith(const RunConfig& seeded, const ModelParams& general, const Datasets& d, const EwcConfig* ewc);

// The sweep's EWC runs in grid order; trace dataset ids are set.
std::vector<SweepRun> run_sweep(const RunConfig& seeded, const ModelParams& general, const FisherVector& fisher,
                                const Datasets& d);

// Per-lambda summary used for selection and the sweep report.
struct SweepSummary {
    double lambda = 0.0;
    double initial_ce = 0.0;  // CE of the first recorded iteration
    double tail_ce = 0.0;
    double peak_ce = 0.0;
    double peak_penalty = 0.0;
    double final_penalty = 0.0;
};

SweepSummary summarize(const SweepRun& run, std::size_t window);

struct ModelMetrics {
    double ln_rmse = 0.0;
    double heldout_a = 0.0;
    double heldout_b = 0.0;
    std::vector<DecodedSample> samples;
};

ModelMetrics evaluate_model(const ModelParams& params, const Datasets& d);
// Mean and std over runs; samples come from the first run.
EvalReport aggregate_report(std::span<const ModelMetrics> runs);

// header model,ln_rmse_mean,ln_rmse_std,heldout_A_mean,heldout_A_std,heldout_B_mean,heldout_B_std
std::string table_main_csv(const std::vector<std::pair<std::string, EvalReport>>& rows);

Embedding embed_layer(const std::map<std::string, ModelParams>& checkpoints, int layer, const TsneConfig& cfg);

struct SeedOutcome {
    std::uint64_t seed = 0;
    ModelParams general;
    FisherVector fisher;  // general task at the general model
    TrainResult plain;
    TrainResult ewc;
    ModelMetrics base_metrics, plain_metrics, ewc_metrics;
};

struct PipelineResult {
    std::filesystem::path root;
    double lambda = 0.0;
    bool lambda_from_sweep = true;
    std::vector<SweepRun> sweep;  // first seed only
    std::vector<SeedOutcome> seeds;
    SensitivityTable sensitivity;
    Embedding embedding;
    std::string table_csv;
    double seconds = 0.0;
};

// <stem>.csv / .json / .svg
void write_trace(const LossTrace& trace, const std::filesystem::path& stem);
// Writes every sweep trace, traces/sweep.svg and reports/sweep.json; returns
// the lambda chosen by select_lambda against the unconstrained reference run.
double report_sweep(const RunLayout& layout, const RunConfig& config, std::uint64_t seed, std::span<const SweepRun> runs,
                    const LossTrace& reference, std::optional<double> used_lambda);

// Runs every stage and writes the run directory.
PipelineResult run_pipeline(const RunConfig& config, const Logger& log = {});

} // namespace ewclab
