#include "doctest.h"

#include <array>
#include <cstdio>
#include <filesystem>
#include <sys/wait.h>
#include <unistd.h>

#include "ewclab/checkpoint.hpp"
#include "ewclab/config.hpp"
#include "ewclab/report.hpp"

using namespace ewclab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;  // stdout and stderr interleaved
};

Outcome run_cli(const std::string& args) {
    const std::string cmd = std::string(EWCLAB_CLI) + " " + args + " 2>&1";
    Outcome o;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) o.out += buf.data();
    const int status = ::pclose(pipe);
    o.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return o;
}

// A configuration small enough that every subcommand finishes in seconds.
RunConfig tiny_config(const fs::path& out) {
    RunConfig c;
    c.run_name = "cli";
    c.output_dir = out;
    c.model.n_layers = 2;
    c.model.d_model = 8;
    c.model.d_ffn = 8;
    c.pretrain.epochs = 1;
    c.opt.epochs = 1;
    c.data.arith.n_train = 40;
    c.data.arith.n_test = 10;
    c.data.corpus_a.n_sentences = 20;
    c.data.corpus_b.n_sentences = 20;
    c.data.heldout_sentences = 10;
    c.ewc.fisher_samples = 20;
    c.ewc.grid = {100.0, 1.0};
    c.ewc.select_window = 2;
    c.analysis.vital_n = 10;
    c.analysis.tsne.iters = 60;
    c.seeds = {1};
    return c;
}

} // namespace

TEST_CASE("cli subcommands on a tiny configuration") {
    const fs::path out = fs::temp_directory_path() / ("ewclab_cli_" + std::to_string(::getpid()));
    fs::remove_all(out);
    const RunConfig cfg = tiny_config(out);
    const fs::path config = out / "tiny.json";
    save_run_config(cfg, config);
    const std::string common = "--config " + config.string();
    const fs::path root = out / "cli";

    auto gen = run_cli("gen-data " + common);
    REQUIRE_MESSAGE(gen.code == 0, gen.out);
    for (const char* f : {"arith_train.jsonl", "arith_test.jsonl", "corpus_a.jsonl", "corpus_b.jsonl",
                          "heldout_a.jsonl", "heldout_b.jsonl"})
        CHECK_MESSAGE(fs::exists(root / "data" / f), f);
    CHECK(load_run_config(root / "config.json") == cfg);

    auto pre = run_cli("pretrain " + common);
    REQUIRE_MESSAGE(pre.code == 0, pre.out);
    const fs::path general = root / "checkpoints" / "general_seed1.ckpt";
    REQUIRE(fs::exists(general));
    CHECK(load_checkpoint(general).config.d_model == 8);
    CHECK(fs::exists(root / "traces" / "pretrain_seed1.csv"));
    CHECK(fs::exists(root / "traces" / "pretrain_seed1.svg"));

    auto fis = run_cli("fisher " + common + " --checkpoint " + general.string() + " --task A");
    REQUIRE_MESSAGE(fis.code == 0, fis.out);
    const fs::path fisher = root / "checkpoints" / "fisher_A_seed1.ckpt";
    CHECK(load_fisher(fisher).task_label == "A");

    auto plain = run_cli("train-arith " + common + " --checkpoint " + general.string() + " --plain");
    REQUIRE_MESSAGE(plain.code == 0, plain.out);
    const fs::path plain_ckpt = root / "checkpoints" / "plain-arith_seed1.ckpt";
    CHECK(fs::exists(plain_ckpt));

    auto ewc = run_cli("train-arith " + common + " --checkpoint " + general.string() + " --ewc --lambda 10 --fisher " +
                       fisher.string());
    REQUIRE_MESSAGE(ewc.code == 0, ewc.out);
    const fs::path ewc_ckpt = root / "checkpoints" / "ewc-arith_seed1_lambda10.ckpt";
    CHECK(fs::exists(ewc_ckpt));
    CHECK(fs::exists(root / "traces" / "ewc-arith_seed1_lambda10.json"));

    auto both = run_cli("train-arith " + common + " --checkpoint " + general.string() + " --ewc --plain");
    CHECK(both.code == 1);
    CHECK(both.out.rfind("error: config: ", 0) == 0);
    auto no_lambda = run_cli("train-arith " + common + " --checkpoint " + general.string() + " --ewc");
    CHECK(no_lambda.code == 1);

    auto sweep = run_cli("sweep " + common + " --checkpoint " + general.string() + " --grid 1000,1");
    REQUIRE_MESSAGE(sweep.code == 0, sweep.out);
    CHECK(fs::exists(root / "traces" / "sweep.svg"));
    CHECK(fs::exists(root / "reports" / "sweep.json"));

    auto ev = run_cli("eval " + common + " --checkpoint " + plain_ckpt.string());
    REQUIRE_MESSAGE(ev.code == 0, ev.out);
    const auto rep = eval_report_from_json(nlohmann::json::parse(read_text_file(root / "reports" / "eval_plain-arith_seed1.json")));
    CHECK(rep.samples.size() == 10);
    CHECK(rep.heldout_mlm_loss.count("A") == 1);
    CHECK(fs::exists(root / "reports" / "samples_plain-arith_seed1.csv"));

    auto ts = run_cli("tsne " + common + " --layer 0 --checkpoint " + general.string() + " " + plain_ckpt.string() + " " +
                      ewc_ckpt.string());
    REQUIRE_MESSAGE(ts.code == 0, ts.out);
    const std::string csv = read_text_file(root / "reports" / "tsne_layer0.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 3 * 4 * 8);

    auto missing = run_cli("eval " + common + " --checkpoint " + (out / "nope.ckpt").string());
    CHECK(missing.code == 1);
    CHECK(missing.out.rfind("error: io: ", 0) == 0);
    auto usage = run_cli("fisher " + common);
    CHECK(usage.code == 2);
    CHECK(usage.out.rfind("error: usage: ", 0) == 0);
    auto help = run_cli("--help");
    CHECK(help.code == 0);
    CHECK(help.out.find("pipeline") != std::string::npos);

    fs::remove_all(out);
}

TEST_CASE("cli pipeline on a tiny configuration") {
    const fs::path out = fs::temp_directory_path() / ("ewclab_pipe_" + std::to_string(::getpid()));
    fs::remove_all(out);
    RunConfig cfg = tiny_config(out);
    cfg.seeds = {1, 2};
    const fs::path config = out / "tiny.json";
    save_run_config(cfg, config);
    auto r = run_cli("pipeline --config " + config.string());
    REQUIRE_MESSAGE(r.code == 0, r.out);
    const fs::path root = out / "cli";
    const std::string table = read_text_file(root / "reports" / "table_main.csv");
    CHECK(table.rfind("model,ln_rmse_mean", 0) == 0);
    CHECK(std::count(table.begin(), table.end(), '\n') == 4);
    for (const char* f : {"sensitivity_layer1.csv", "sensitivity_layer1.svg", "tsne_layer1.csv", "tsne_layer1.svg",
                          "sweep.json"})
        CHECK_MESSAGE(fs::exists(root / "reports" / f), f);
    CHECK(fs::exists(root / "checkpoints" / "general_seed2.ckpt"));

    auto again = run_cli("pipeline --config " + config.string() + " --run-name again");
    REQUIRE_MESSAGE(again.code == 0, again.out);
    CHECK(read_text_file(out / "again" / "reports" / "table_main.csv") == table);
    fs::remove_all(out);
}
