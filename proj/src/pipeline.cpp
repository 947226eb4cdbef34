#include "ewclab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "ewclab/checkpoint.hpp"
#include "ewclab/dataio.hpp"
#include "ewclab/error.hpp"
#include "ewclab/parallel.hpp"

namespace ewclab {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

CorpusSpec heldout_spec(CorpusSpec spec, std::size_t n) {
    spec.seed += 1000;
    spec.n_sentences = n;
    return spec;
}

std::uint64_t fisher_seed(std::uint64_t seed, const std::string& task) {
    const auto it = std::find(kFisherTasks.begin(), kFisherTasks.end(), task);
    return seed * 16 + static_cast<std::uint64_t>(it - kFisherTasks.begin()) + 1;
}

void say(const Logger& log, const std::string& msg) {
    if (log) log(msg);
}

std::string fixed6(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

} // namespace

void write_trace(const LossTrace& trace, const std::filesystem::path& stem) {
    auto with = [&](const char* ext) { return std::filesystem::path(stem.string() + ext); };
    export_report(trace, with(".csv"), Format::Csv);
    export_report(trace, with(".json"), Format::Json);
    export_report(trace, with(".svg"), Format::Svg);
}

double report_sweep(const RunLayout& layout, const RunConfig& config, std::uint64_t seed, std::span<const SweepRun> runs,
                    const LossTrace& reference, std::optional<double> used_lambda) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : runs) {
        write_trace(r.trace, layout.traces() / ("sweep_" + seed_tag(seed) + "_" + lambda_tag(r.lambda)));
        const auto s = summarize(r, config.ewc.select_window);
        rows.push_back({{"lambda", s.lambda}, {"initial_ce", s.initial_ce}, {"tail_ce", s.tail_ce}, {"peak_ce", s.peak_ce},
                        {"peak_penalty", s.peak_penalty}, {"final_penalty", s.final_penalty}});
    }
    write_text_file(layout.traces() / "sweep.svg", sweep_svg(runs, "Lambda sweep: CE and EWC loss"));
    const double ref_tail = tail_ce(reference, config.ewc.select_window);
    const double selected = select_lambda(runs, ref_tail, config.ewc.select_ratio, config.ewc.select_window);
    nlohmann::json j{{"seed", seed},
                     {"runs", rows},
                     {"reference_tail_ce", ref_tail},
                     {"selected_lambda", selected},
                     {"used_lambda", used_lambda.value_or(selected)},
                     {"select_ratio", config.ewc.select_ratio},
                     {"select_window", config.ewc.select_window}};
    write_text_file(layout.reports() / "sweep.json", j.dump(2) + '\n');
    return selected;
}

std::vector<TokenSeq> Datasets::general() const {
    std::vector<TokenSeq> out(corpus_a);
    out.insert(out.end(), corpus_b.begin(), corpus_b.end());
    return out;
}

std::vector<TokenSeq> Datasets::arith_train_seqs() const { return arith_seqs(arith_train); }

Datasets make_datasets(const DataConfig& c) {
    Datasets d;
    d.arith_train = gen_arith_dataset(c.arith.n_train, c.arith.dist, c.arith.seed);
    d.arith_test = gen_arith_dataset(c.arith.n_test, c.arith.dist, c.arith.seed + 1000);
    d.corpus_a = gen_text_corpus(c.corpus_a);
    d.corpus_b = gen_text_corpus(c.corpus_b);
    d.heldout_a = gen_text_corpus(heldout_spec(c.corpus_a, c.heldout_sentences));
    d.heldout_b = gen_text_corpus(heldout_spec(c.corpus_b, c.heldout_sentences));
    return d;
}

void write_datasets(const Datasets& d, const std::filesystem::path& dir) {
    write_text_file(dir / "arith_train.jsonl", dataset_jsonl(d.arith_train));
    write_text_file(dir / "arith_test.jsonl", dataset_jsonl(d.arith_test));
    write_text_file(dir / "corpus_a.jsonl", corpus_jsonl(d.corpus_a));
    write_text_file(dir / "corpus_b.jsonl", corpus_jsonl(d.corpus_b));
    write_text_file(dir / "heldout_a.jsonl", corpus_jsonl(d.heldout_a));
    write_text_file(dir / "heldout_b.jsonl", corpus_jsonl(d.heldout_b));
}

FisherVector task_fisher(const ModelParams& params, const Datasets& d, const std::string& task, std::size_t n_samples,
                         std::uint64_t seed) {
    std::vector<TokenSeq> data;
    if (task == "general") data = d.general();
    else if (task == "A") data = d.corpus_a;
    else if (task == "B") data = d.corpus_b;
    else if (task == "arith") data = d.arith_train_seqs();
    else fail(ErrorKind::InvalidInput, "unknown Fisher task '" + task + "' (expected general, A, B or arith)");
    return estimate_diag_fisher(params, data, n_samples, fisher_seed(seed, task), task);
}

ModelParams pretrain(const RunConfig& seeded, const Datasets& d, LossTrace* trace) {
    auto r = train(build_model(seeded.model), d.general(), seeded.pretrain);
    r.trace.dataset_id = "general";
    if (trace) *trace = std::move(r.trace);
    return std::move(r.params);
}

TrainResult train_arith(const RunConfig& seeded, const ModelParams& general, const Datasets& d, const EwcConfig* ewc) {
    const auto data = d.arith_train_seqs();
    auto r = ewc ? train_ewc(general, data, seeded.opt, *ewc) : train(general, data, seeded.opt);
    r.trace.dataset_id = "arith";
    return r;
}

std::vector<SweepRun> run_sweep(const RunConfig& seeded, const ModelParams& general, const FisherVector& fisher,
                                const Datasets& d) {
    auto runs = lambda_sweep(general, d.arith_train_seqs(), seeded.opt, general, fisher, seeded.ewc.grid);
    for (auto& r : runs) r.trace.dataset_id = "arith";
    return runs;
}

SweepSummary summarize(const SweepRun& run, std::size_t window) {
    const auto& recs = run.trace.records;
    if (recs.empty()) fail(ErrorKind::InvalidInput, "empty sweep trace");
    SweepSummary s;
    s.lambda = run.lambda;
    s.initial_ce = recs.front().ce_loss;
    s.tail_ce = tail_ce(run.trace, window);
    for (const auto& r : recs) {
        s.peak_ce = std::max(s.peak_ce, r.ce_loss);
        s.peak_penalty = std::max(s.peak_penalty, r.ewc_penalty);
    }
    s.final_penalty = recs.back().ewc_penalty;
    return s;
}

ModelMetrics evaluate_model(const ModelParams& params, const Datasets& d) {
    ModelMetrics m;
    auto arith = evaluate_arith(params, d.arith_test);
    m.ln_rmse = arith.ln_rmse;
    m.samples = std::move(arith.samples);
    m.heldout_a = heldout_mlm_loss(params, d.heldout_a);
    m.heldout_b = heldout_mlm_loss(params, d.heldout_b);
    return m;
}

EvalReport aggregate_report(std::span<const ModelMetrics> runs) {
    if (runs.empty()) fail(ErrorKind::InvalidInput, "no runs to aggregate");
    std::vector<double> ln, a, b;
    for (const auto& r : runs) {
        ln.push_back(r.ln_rmse);
        a.push_back(r.heldout_a);
        b.push_back(r.heldout_b);
    }
    EvalReport rep;
    rep.ln_rmse = aggregate(ln);
    rep.heldout_mlm_loss["A"] = aggregate(a);
    rep.heldout_mlm_loss["B"] = aggregate(b);
    rep.samples = runs.front().samples;
    return rep;
}

std::string table_main_csv(const std::vector<std::pair<std::string, EvalReport>>& rows) {
    std::string out = "model,ln_rmse_mean,ln_rmse_std,heldout_A_mean,heldout_A_std,heldout_B_mean,heldout_B_std\n";
    for (const auto& [name, r] : rows) {
        const auto& a = r.heldout_mlm_loss.at("A");
        const auto& b = r.heldout_mlm_loss.at("B");
        out += name + ',' + fixed6(r.ln_rmse.mean) + ',' + fixed6(r.ln_rmse.std) + ',' + fixed6(a.mean) + ',' +
               fixed6(a.std) + ',' + fixed6(b.mean) + ',' + fixed6(b.std) + '\n';
    }
    return out;
}

Embedding embed_layer(const std::map<std::string, ModelParams>& checkpoints, int layer, const TsneConfig& cfg) {
    Embedding e;
    e.points = collect_layer_points(checkpoints, layer);
    e.result = tsne(e.points, cfg);
    return e;
}

PipelineResult run_pipeline(const RunConfig& config, const Logger& log) {
    config.validate();
    const auto t0 = Clock::now();
    const RunLayout layout(config);
    layout.create();
    save_run_config(config, layout.config());

    PipelineResult res;
    res.root = layout.root;

    const Datasets data = make_datasets(config.data);
    write_datasets(data, layout.data());
    say(log, "data: " + std::to_string(data.arith_train.size()) + " arithmetic, " +
                 std::to_string(data.corpus_a.size() + data.corpus_b.size()) + " text records");

    // Stage 1, per seed: general model, its Fisher, plain arithmetic model.
    res.seeds.resize(config.seeds.size());
    parallel_for(config.seeds.size(), [&](std::size_t i) {
        const RunConfig c = config.for_seed(config.seeds[i]);
        SeedOutcome& s = res.seeds[i];
        s.seed = config.seeds[i];
        const std::string tag = seed_tag(s.seed);
        LossTrace pre_trace;
        s.general = pretrain(c, data, &pre_trace);
        write_trace(pre_trace, layout.traces() / ("pretrain_" + tag));
        save_checkpoint(s.general, layout.checkpoints() / ("general_" + tag + ".ckpt"));
        s.fisher = task_fisher(s.general, data, "general", c.ewc.fisher_samples, s.seed);
        save_fisher(s.fisher, s.general.config, layout.checkpoints() / ("fisher_general_" + tag + ".ckpt"));
        s.base_metrics = evaluate_model(s.general, data);
        s.plain = train_arith(c, s.general, data, nullptr);
        write_trace(s.plain.trace, layout.traces() / ("plain-arith_" + tag));
        save_checkpoint(s.plain.params, layout.checkpoints() / ("plain-arith_" + tag + ".ckpt"));
        s.plain_metrics = evaluate_model(s.plain.params, data);
        say(log, tag + ": pretrained and plain arithmetic done");
    });

    // Stage 2: lambda sweep on the first seed.
    const SeedOutcome& first = res.seeds.front();
    const RunConfig c0 = config.for_seed(first.seed);
    res.sweep = run_sweep(c0, first.general, first.fisher, data);
    const double selected = report_sweep(layout, config, first.seed, res.sweep, first.plain.trace, config.ewc.lambda);
    res.lambda_from_sweep = !config.ewc.lambda.has_value();
    res.lambda = config.ewc.lambda.value_or(selected);
    say(log, "sweep: selected lambda " + format_double(selected) + ", using " + format_double(res.lambda));

    // Stage 3, per seed: EWC model at the chosen lambda. The first seed's
    // sweep already trained it when the lambda is on the grid.
    parallel_for(res.seeds.size(), [&](std::size_t i) {
        SeedOutcome& s = res.seeds[i];
        const RunConfig c = config.for_seed(s.seed);
        const auto reuse = std::find_if(res.sweep.begin(), res.sweep.end(), [&](const SweepRun& r) { return r.lambda == res.lambda; });
        if (i == 0 && reuse != res.sweep.end()) {
            s.ewc = TrainResult{reuse->params, reuse->trace};
        } else {
            const EwcConfig ewc{res.lambda, s.general, s.fisher};
            s.ewc = train_arith(c, s.general, data, &ewc);
        }
        const std::string tag = seed_tag(s.seed) + "_" + lambda_tag(res.lambda);
        write_trace(s.ewc.trace, layout.traces() / ("ewc-arith_" + tag));
        save_checkpoint(s.ewc.params, layout.checkpoints() / ("ewc-arith_" + tag + ".ckpt"));
        s.ewc_metrics = evaluate_model(s.ewc.params, data);
        say(log, seed_tag(s.seed) + ": EWC arithmetic done");
    });

    // Stage 4: reports.
    std::vector<ModelMetrics> base, plain, ewc;
    for (const auto& s : res.seeds) {
        base.push_back(s.base_metrics);
        plain.push_back(s.plain_metrics);
        ewc.push_back(s.ewc_metrics);
    }
    const std::vector<std::pair<std::string, EvalReport>> rows{
        {"base", aggregate_report(base)}, {"plain-arith", aggregate_report(plain)}, {"ewc-arith", aggregate_report(ewc)}};
    for (const auto& [name, rep] : rows) {
        export_report(rep, layout.reports() / ("eval_" + name + ".json"), Format::Json);
        export_report(rep, layout.reports() / ("samples_" + name + ".csv"), Format::Csv);
    }
    res.table_csv = table_main_csv(rows);
    write_text_file(layout.reports() / "table_main.csv", res.table_csv);

    const int layer = config.analysis.layer;
    const std::string ltag = "layer" + std::to_string(layer);
    // Vital parameters of the arithmetic task, scored for each task at the
    // plain arithmetic model.
    std::map<std::string, FisherVector> by_task;
    for (const char* task : {"arith", "A", "B"})
        by_task[task] = task_fisher(first.plain.params, data, task, config.ewc.fisher_samples, first.seed);
    const VitalSet vital = top_n_vital(by_task.at("arith"), first.plain.params, layer, config.analysis.vital_n, "arith");
    res.sensitivity = sensitivity_compare(vital, by_task);
    export_report(res.sensitivity, layout.reports() / ("sensitivity_" + ltag + ".csv"), Format::Csv);
    export_report(res.sensitivity, layout.reports() / ("sensitivity_" + ltag + ".svg"), Format::Svg);

    res.embedding = embed_layer({{"general", first.general}, {"plain-arith", first.plain.params}, {"ewc-arith", first.ewc.params}},
                                layer, c0.analysis.tsne);
    export_report(res.embedding, layout.reports() / ("tsne_" + ltag + ".csv"), Format::Csv);
    export_report(res.embedding, layout.reports() / ("tsne_" + ltag + ".svg"), Format::Svg);
    export_report(res.embedding, layout.reports() / ("tsne_" + ltag + ".json"), Format::Json);

    res.seconds = seconds_since(t0);
    say(log, "pipeline finished in " + format_double(std::round(res.seconds)) + " s");
    return res;
}

} // namespace ewclab
