#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "ewclab/checkpoint.hpp"
#include "ewclab/config.hpp"
#include "ewclab/error.hpp"
#include "ewclab/pipeline.hpp"
#include "ewclab/report.hpp"

using namespace ewclab;
namespace fs = std::filesystem;

namespace {

std::string golden(const std::string& name) { return read_text_file(fs::path(EWCLAB_GOLDEN_DIR) / name); }

fs::path scratch(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("ewclab_report_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    return dir / name;
}

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no ewclab::Error thrown");
    return ErrorKind::InvalidShape;
}

LossTrace sample_trace() {
    LossTrace t;
    t.records = {{1, 2.5, 0.0, 2.5}, {2, 1.25, 0.125, 1.375}, {3, 0.1, 1e-7, 0.1000001}};
    t.lambda = 1e7;
    t.seed = 3;
    t.dataset_id = "arith_train";
    t.wall_clock_seconds = 1.5;
    return t;
}

EvalReport sample_report() {
    EvalReport r;
    r.ln_rmse = {9.5, 0.25, 2};
    r.heldout_mlm_loss["A"] = {1.1234567, 0.0, 2};
    r.heldout_mlm_loss["B"] = {2.0, 0.1, 2};
    r.samples = {{12, Op::Add, 7, 19, 18}, {5, Op::Sub, 9, -4, -4}};
    return r;
}

ModelConfig tiny() {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 4;
    c.n_heads = 2;
    c.d_ffn = 6;
    c.max_seq = 24;
    c.seed = 8;
    return c;
}

} // namespace

TEST_CASE("format_double round-trips") {
    CHECK(format_double(0.5) == "0.5");
    CHECK(format_double(3.0) == "3");
    CHECK(format_double(1e-7) == "1e-07");
    for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23}) CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("CSV exports match golden files") {
    CHECK(trace_csv(sample_trace()) == golden("trace.csv"));

    SensitivityTable s;
    s.layer = 1;
    s.tasks = {"A", "arith"};
    s.indices = {12, 7};
    s.scores = {{0.5, 3.0}, {0.25, 2e-10}};
    CHECK(sensitivity_csv(s) == golden("sensitivity.csv"));

    Embedding e;
    e.result.n = 2;
    e.result.coords = {1.5, -2.0, 0.0, 0.75};
    e.points.labels = {"general", "plain-arith"};
    e.points.layer = 1;
    CHECK(embedding_csv(e) == golden("embedding.csv"));

    const auto r = sample_report();
    CHECK(samples_csv(r.samples) == golden("samples.csv"));
    CHECK(table_main_csv({{"general", r}}) == golden("table_main.csv"));
}

TEST_CASE("trace metadata and SVG") {
    const auto meta = trace_metadata(sample_trace());
    CHECK(meta["lambda"] == 1e7);
    CHECK(meta["seed"] == 3);
    CHECK(meta["dataset_id"] == "arith_train");
    CHECK(meta["iterations"] == 3);
    const std::string svg = trace_svg(sample_trace(), "run <1>");
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("</svg>") != std::string::npos);
    CHECK(svg.find("run &lt;1&gt;") != std::string::npos);
    CHECK(svg.find("href") == std::string::npos);
    std::size_t lines = 0;
    for (std::size_t p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++lines;
    CHECK(lines == 2);

    SweepRun a{1e9, sample_trace(), {}}, b{1e5, sample_trace(), {}};
    const std::vector<SweepRun> runs{a, b};
    const std::string sweep = sweep_svg(runs, "sweep");
    CHECK(sweep.find("lambda=1e+09") != std::string::npos);
    CHECK(sweep.find("stroke-dasharray") != std::string::npos);
}

TEST_CASE("EvalReport JSON round-trip") {
    const EvalReport r = sample_report();
    const auto j = to_json(r);
    CHECK(j["samples"].size() == 2);
    CHECK(j["heldout_mlm_loss"]["A"]["n_runs"] == 2);
    CHECK(eval_report_from_json(nlohmann::json::parse(j.dump())) == r);

    const fs::path path = scratch("eval.json");
    export_report(r, path, Format::Json);
    CHECK(eval_report_from_json(nlohmann::json::parse(read_text_file(path))) == r);
    CHECK(kind_of([&] { export_report(r, scratch("eval.svg"), Format::Svg); }) == ErrorKind::InvalidInput);
}

TEST_CASE("export failures name the path") {
    const fs::path blocker = scratch("blocker");
    write_text_file(blocker, "x");
    try {
        export_report(sample_trace(), blocker / "trace.csv", Format::Csv);
        FAIL("expected an io error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Io);
        CHECK(std::string(e.what()).find("blocker") != std::string::npos);
    }
    CHECK(kind_of([] { read_text_file("/nonexistent/ewclab/file"); }) == ErrorKind::Io);
}

TEST_CASE("checkpoints round-trip byte for byte") {
    const ModelParams p = build_model(tiny());
    const fs::path a = scratch("a.ckpt"), b = scratch("b.ckpt");
    save_checkpoint(p, a);
    const ModelParams loaded = load_checkpoint(a);
    CHECK(loaded == p);
    save_checkpoint(loaded, b);
    CHECK(read_text_file(a) == read_text_file(b));

    CheckpointContainer c;
    c.model_config = p.config;
    c.tensors = p.entries;
    const auto m = c.manifest();
    REQUIRE(m.size() == p.entries.size());
    std::uint64_t off = 0;
    for (std::size_t i = 0; i < m.size(); ++i) {
        CHECK(m[i].byte_offset == off);
        CHECK(m[i].byte_length == 8 * p.entries[i].tensor.size());
        off += m[i].byte_length;
    }
    CHECK(decode_container(encode_container(c)) == c);
}

TEST_CASE("container payload is little-endian float64") {
    CheckpointContainer c;
    c.model_config = tiny();
    c.tensors = {{"x", Tensor({2}, {1.0, -2.0})}};
    const std::string bytes = encode_container(c);
    const std::string payload = bytes.substr(bytes.find('\n') + 1);
    const std::string want{"\x00\x00\x00\x00\x00\x00\xf0\x3f\x00\x00\x00\x00\x00\x00\x00\xc0", 16};
    CHECK(payload == want);
    CHECK(decode_container(bytes) == c);
}

TEST_CASE("corrupted containers are rejected") {
    CheckpointContainer c;
    c.model_config = tiny();
    c.tensors = build_model(tiny()).entries;
    const std::string good = encode_container(c);
    const std::size_t nl = good.find('\n');
    nlohmann::json header = nlohmann::json::parse(good.substr(0, nl));
    const std::string payload = good.substr(nl + 1);
    auto with_header = [&](const nlohmann::json& h, const std::string& body) { return h.dump() + '\n' + body; };

    CHECK(kind_of([&] { decode_container(good.substr(0, good.size() - 8)); }) == ErrorKind::Io);
    CHECK(kind_of([&] { decode_container(good + "12345678"); }) == ErrorKind::Io);
    CHECK(kind_of([&] { decode_container("not json\n"); }) == ErrorKind::Io);
    CHECK(kind_of([&] { decode_container(""); }) == ErrorKind::Io);

    auto h = header;
    h["format_version"] = 99;
    CHECK(kind_of([&] { decode_container(with_header(h, payload)); }) == ErrorKind::Io);
    h = header;
    h["tensors"][1]["byte_offset"] = 0;
    CHECK(kind_of([&] { decode_container(with_header(h, payload)); }) == ErrorKind::Io);
    h = header;
    h["tensors"][0]["byte_length"] = h["tensors"][0]["byte_length"].get<std::uint64_t>() - 8;
    CHECK(kind_of([&] { decode_container(with_header(h, payload)); }) == ErrorKind::Io);

    CHECK(kind_of([] { load_checkpoint("/nonexistent/x.ckpt"); }) == ErrorKind::Io);
}

TEST_CASE("fisher containers") {
    const ModelParams p = build_model(tiny());
    FisherVector f;
    f.values.resize(p.flat_len());
    for (std::size_t i = 0; i < f.values.size(); ++i) f.values[i] = 1.0 / static_cast<double>(i + 1);
    f.n_samples = 17;
    f.task_label = "general";
    const fs::path path = scratch("f.ckpt");
    save_fisher(f, p.config, path);
    CHECK(load_fisher(path) == f);
    const fs::path model_path = scratch("m.ckpt");
    save_checkpoint(p, model_path);
    CHECK(kind_of([&] { load_fisher(model_path); }) == ErrorKind::InvalidInput);
    FisherVector wrong = f;
    wrong.values.pop_back();
    CHECK_THROWS_AS(save_fisher(wrong, p.config, scratch("w.ckpt")), Error);
}

TEST_CASE("run configuration") {
    RunConfig c;
    CHECK(c.pretrain.epochs == 10);
    CHECK(c.ewc.grid.size() == 8);
    CHECK_NOTHROW(c.validate());
    c.run_name = "custom";
    c.ewc.lambda = 1e7;
    c.seeds = {4, 5, 6};
    c.data.corpus_b.mask_rate = 0.2;
    c.analysis.tsne.perplexity = 12.0;
    CHECK(run_config_from_json(nlohmann::json::parse(to_json(c).dump())) == c);

    const fs::path path = scratch("config.json");
    save_run_config(c, path);
    CHECK(load_run_config(path) == c);

    CHECK(run_config_from_json(nlohmann::json::object()) == RunConfig{});
    auto j = to_json(RunConfig{});
    j["model"]["d_modle"] = 3;
    CHECK(kind_of([&] { run_config_from_json(j); }) == ErrorKind::Config);
    j = to_json(RunConfig{});
    j["seeds"] = "one";
    CHECK(kind_of([&] { run_config_from_json(j); }) == ErrorKind::Config);
    j = to_json(RunConfig{});
    j["opt"]["lr"] = -1.0;
    CHECK(kind_of([&] { run_config_from_json(j); }) == ErrorKind::Config);
    CHECK(kind_of([] { load_run_config("/nonexistent/config.json"); }) == ErrorKind::Io);

    const RunConfig s = RunConfig{}.for_seed(9);
    CHECK(s.model.seed == 9);
    CHECK(s.opt.seed == 9);
    CHECK(s.analysis.tsne.seed == 9);
    CHECK(seed_tag(3) == "seed3");
    CHECK(lambda_tag(1e7) == "lambda1e+07");
    CHECK(RunLayout(c).reports() == fs::path("runs") / "custom" / "reports");
}
