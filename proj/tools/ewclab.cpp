// ewclab command-line entry point.

#include <cstdio>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ewclab/checkpoint.hpp"
#include "ewclab/error.hpp"
#include "ewclab/pipeline.hpp"
#include "ewclab/runtime.hpp"

using namespace ewclab;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda;
    std::optional<int> layer;
    std::optional<std::string> out;
    std::optional<std::string> run_name;
};

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "Run configuration JSON (defaults apply when omitted)");
    cmd->add_option("--seed", c.seed, "Use this single seed instead of the config's seed list");
    cmd->add_option("--lambda", c.lambda, "EWC strength; overrides ewc.lambda");
    cmd->add_option("--layer", c.layer, "Encoder block analysed by sensitivity and t-SNE");
    cmd->add_option("--out", c.out, "Output directory; overrides output_dir");
    cmd->add_option("--run-name", c.run_name, "Run directory name under the output directory");
}

RunConfig resolve(const Common& c) {
    RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
    if (c.seed) cfg.seeds = {*c.seed};
    if (c.lambda) cfg.ewc.lambda = *c.lambda;
    if (c.layer) cfg.analysis.layer = *c.layer;
    if (c.out) cfg.output_dir = *c.out;
    if (c.run_name) cfg.run_name = *c.run_name;
    try {
        cfg.validate();
    } catch (const Error& e) {
        fail(ErrorKind::Config, e.what());
    }
    return cfg;
}

// Layout created and config.json written, so every command leaves a
// self-describing run directory.
RunLayout open_run(const RunConfig& cfg) {
    RunLayout layout(cfg);
    layout.create();
    save_run_config(cfg, layout.config());
    return layout;
}

// "general_seed1.ckpt" -> "general"
std::string label_of(const std::filesystem::path& p) {
    const std::string stem = p.stem().string();
    return stem.substr(0, stem.find('_'));
}

std::string one_line(std::string s) {
    for (char& ch : s)
        if (ch == '\n' || ch == '\r') ch = ' ';
    return s;
}

void report_error(std::string_view kind, const std::string& message) {
    std::fprintf(stderr, "error: %.*s: %s\n", static_cast<int>(kind.size()), kind.data(), one_line(message).c_str());
}

} // namespace

int main(int argc, char** argv) {
    configure_allocator();
    CLI::App app{"Elastic weight consolidation experiments on a small masked language model"};
    app.require_subcommand(1);

    Common common;
    std::string checkpoint, fisher_path, task = "general";
    std::vector<std::string> checkpoints;
    std::vector<double> grid;
    bool use_ewc = false, use_plain = false;

    auto* gen = app.add_subcommand("gen-data", "Write the arithmetic datasets and text corpora as JSON lines");
    auto* pre = app.add_subcommand("pretrain", "Train the general model on both grammars");
    auto* fis = app.add_subcommand("fisher", "Estimate the diagonal Fisher of a checkpoint on one task");
    auto* tra = app.add_subcommand("train-arith", "Train a checkpoint on arithmetic, with or without EWC");
    auto* swp = app.add_subcommand("sweep", "Train with EWC across a lambda grid and select lambda");
    auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint: arithmetic ln RMSE and held-out MLM loss");
    auto* tsn = app.add_subcommand("tsne", "Embed one layer's attention neurons of several checkpoints");
    auto* pip = app.add_subcommand("pipeline", "Run every stage and write table_main.csv");
    for (auto* cmd : {gen, pre, fis, tra, swp, evl, tsn, pip}) add_common(cmd, common);

    for (auto* cmd : {fis, tra, swp, evl}) cmd->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    fis->add_option("--task", task, "general, A, B or arith");
    tra->add_flag("--ewc", use_ewc, "Consolidate towards the checkpoint");
    tra->add_flag("--plain", use_plain, "Train without consolidation");
    for (auto* cmd : {tra, swp}) cmd->add_option("--fisher", fisher_path, "Fisher file; estimated on the general task when omitted");
    swp->add_option("--grid", grid, "Lambda values; overrides ewc.grid")->delimiter(',');
    tsn->add_option("--checkpoint", checkpoints, "Checkpoints to embed; labels come from the name before '_'")
        ->required()
        ->expected(1, -1);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        report_error("usage", e.what());
        return 2;
    }

    try {
        const RunConfig cfg = resolve(common);
        const RunLayout layout = open_run(cfg);
        const std::uint64_t seed = cfg.seeds.front();
        auto log = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };

        // General-task Fisher for `general`, from --fisher when given.
        auto load_or_estimate_fisher = [&](const ModelParams& general, const Datasets& data) {
            if (!fisher_path.empty()) {
                auto f = load_fisher(fisher_path);
                if (f.values.size() != general.flat_len())
                    fail(ErrorKind::InvalidShape, "Fisher file does not match the checkpoint");
                return f;
            }
            return task_fisher(general, data, "general", cfg.ewc.fisher_samples, general.config.seed);
        };

        if (*gen) {
            write_datasets(make_datasets(cfg.data), layout.data());
            std::cout << layout.data().string() << '\n';
        } else if (*pre) {
            const RunConfig c = cfg.for_seed(seed);
            LossTrace trace;
            const auto params = pretrain(c, make_datasets(cfg.data), &trace);
            const auto path = layout.checkpoints() / ("general_" + seed_tag(seed) + ".ckpt");
            save_checkpoint(params, path);
            write_trace(trace, layout.traces() / ("pretrain_" + seed_tag(seed)));
            std::cout << path.string() << '\n';
        } else if (*fis) {
            const auto params = load_checkpoint(checkpoint);
            const auto f = task_fisher(params, make_datasets(cfg.data), task, cfg.ewc.fisher_samples, params.config.seed);
            const auto path = layout.checkpoints() / ("fisher_" + task + "_" + seed_tag(params.config.seed) + ".ckpt");
            save_fisher(f, params.config, path);
            std::cout << path.string() << '\n';
        } else if (*tra) {
            if (use_ewc == use_plain) fail(ErrorKind::Config, "train-arith needs exactly one of --ewc or --plain");
            const auto general = load_checkpoint(checkpoint);
            const RunConfig c = cfg.for_seed(general.config.seed);
            const Datasets data = make_datasets(cfg.data);
            std::string name = "plain-arith_" + seed_tag(general.config.seed);
            TrainResult r;
            if (use_ewc) {
                if (!cfg.ewc.lambda) fail(ErrorKind::Config, "train-arith --ewc needs --lambda or ewc.lambda");
                const EwcConfig ewc{*cfg.ewc.lambda, general, load_or_estimate_fisher(general, data)};
                r = train_arith(c, general, data, &ewc);
                name = "ewc-arith_" + seed_tag(general.config.seed) + "_" + lambda_tag(*cfg.ewc.lambda);
            } else {
                r = train_arith(c, general, data, nullptr);
            }
            const auto path = layout.checkpoints() / (name + ".ckpt");
            save_checkpoint(r.params, path);
            write_trace(r.trace, layout.traces() / name);
            std::cout << path.string() << '\n';
        } else if (*swp) {
            const auto general = load_checkpoint(checkpoint);
            RunConfig c = cfg.for_seed(general.config.seed);
            if (!grid.empty()) c.ewc.grid = grid;
            c.validate();
            const Datasets data = make_datasets(cfg.data);
            const auto runs = run_sweep(c, general, load_or_estimate_fisher(general, data), data);
            // Unconstrained reference run for the convergence test.
            const auto reference = train_arith(c, general, data, nullptr);
            const double selected = report_sweep(layout, c, general.config.seed, runs, reference.trace, c.ewc.lambda);
            std::cout << format_double(selected) << '\n';
        } else if (*evl) {
            const auto params = load_checkpoint(checkpoint);
            const std::vector<ModelMetrics> m{evaluate_model(params, make_datasets(cfg.data))};
            const auto rep = aggregate_report(m);
            const std::string stem = std::filesystem::path(checkpoint).stem().string();
            export_report(rep, layout.reports() / ("eval_" + stem + ".json"), Format::Json);
            export_report(rep, layout.reports() / ("samples_" + stem + ".csv"), Format::Csv);
            std::cout << to_json(rep)["ln_rmse"].dump() << ' ' << to_json(rep)["heldout_mlm_loss"].dump() << '\n';
        } else if (*tsn) {
            std::map<std::string, ModelParams> by_label;
            for (const auto& p : checkpoints) {
                const auto label = label_of(p);
                if (!by_label.emplace(label, load_checkpoint(p)).second)
                    fail(ErrorKind::InvalidInput, "two checkpoints share the label '" + label + "'");
            }
            const int layer = cfg.analysis.layer;
            const auto e = embed_layer(by_label, layer, cfg.for_seed(seed).analysis.tsne);
            const std::string stem = "tsne_layer" + std::to_string(layer);
            export_report(e, layout.reports() / (stem + ".csv"), Format::Csv);
            export_report(e, layout.reports() / (stem + ".svg"), Format::Svg);
            export_report(e, layout.reports() / (stem + ".json"), Format::Json);
            std::cout << (layout.reports() / (stem + ".csv")).string() << '\n';
        } else if (*pip) {
            const auto res = run_pipeline(cfg, log);
            std::cout << res.table_csv;
        }
    } catch (const Error& e) {
        report_error(to_string(e.kind()), e.what());
        return 1;
    } catch (const std::exception& e) {
        report_error("internal", e.what());
        return 1;
    }
    return 0;
}
