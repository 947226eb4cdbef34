#include "ewclab/config.hpp"

#include <cmath>
#include <cstdio>
#include <set>

#include "ewclab/error.hpp"
#include "ewclab/report.hpp"

namespace ewclab {
namespace {

using nlohmann::json;

// Reads fields of one JSON object, then rejects keys nobody asked for.
class ObjectReader {
public:
    ObjectReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) fail(ErrorKind::Config, where_ + " must be an object");
    }

    template <class T>
    void read(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            fail(ErrorKind::Config, where_ + "." + key + " has the wrong type");
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string path(const char* key) const { return where_ + "." + key; }

    void finish() const {
        for (const auto& [k, v] : j_.items())
            if (!seen_.count(k)) fail(ErrorKind::Config, "unknown key " + where_ + "." + k);
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

void read_model(const json& j, const std::string& where, ModelConfig& c) {
    ObjectReader r(j, where);
    r.read("n_layers", c.n_layers);
    r.read("n_heads", c.n_heads);
    r.read("d_model", c.d_model);
    r.read("d_ffn", c.d_ffn);
    r.read("max_seq", c.max_seq);
    r.read("vocab_size", c.vocab_size);
    r.read("seed", c.seed);
    r.finish();
}

json opt_json(const OptConfig& o) {
    return {{"algorithm", to_string(o.algorithm)}, {"lr", o.lr}, {"adam_beta1", o.adam_beta1},
            {"adam_beta2", o.adam_beta2}, {"adam_eps", o.adam_eps}, {"batch_size", o.batch_size},
            {"epochs", o.epochs}, {"seed", o.seed}};
}

void read_opt(const json& j, const std::string& where, OptConfig& o) {
    ObjectReader r(j, where);
    std::string algo = to_string(o.algorithm);
    r.read("algorithm", algo);
    try {
        o.algorithm = algorithm_from_string(algo);
    } catch (const Error& e) {
        fail(ErrorKind::Config, where + ".algorithm: " + e.what());
    }
    r.read("lr", o.lr);
    r.read("adam_beta1", o.adam_beta1);
    r.read("adam_beta2", o.adam_beta2);
    r.read("adam_eps", o.adam_eps);
    r.read("batch_size", o.batch_size);
    r.read("epochs", o.epochs);
    r.read("seed", o.seed);
    r.finish();
}

json corpus_json(const CorpusSpec& c) {
    return {{"grammar", to_string(c.grammar)}, {"n_sentences", c.n_sentences}, {"mask_rate", c.mask_rate},
            {"seed", c.seed}, {"clauses_per_record", c.clauses_per_record}};
}

void read_corpus(const json& j, const std::string& where, CorpusSpec& c) {
    ObjectReader r(j, where);
    std::string g = to_string(c.grammar);
    r.read("grammar", g);
    try {
        c.grammar = grammar_from_string(g);
    } catch (const Error& e) {
        fail(ErrorKind::Config, where + ".grammar: " + e.what());
    }
    r.read("n_sentences", c.n_sentences);
    r.read("mask_rate", c.mask_rate);
    r.read("seed", c.seed);
    r.read("clauses_per_record", c.clauses_per_record);
    r.finish();
}

json tsne_json(const TsneConfig& t) {
    return {{"perplexity", t.perplexity}, {"iters", t.iters}, {"learning_rate", t.learning_rate},
            {"momentum_initial", t.momentum_initial}, {"momentum_final", t.momentum_final},
            {"momentum_switch_iter", t.momentum_switch_iter}, {"exaggeration", t.exaggeration},
            {"exaggeration_iters", t.exaggeration_iters}, {"seed", t.seed}};
}

void read_tsne(const json& j, const std::string& where, TsneConfig& t) {
    ObjectReader r(j, where);
    r.read("perplexity", t.perplexity);
    r.read("iters", t.iters);
    r.read("learning_rate", t.learning_rate);
    r.read("momentum_initial", t.momentum_initial);
    r.read("momentum_final", t.momentum_final);
    r.read("momentum_switch_iter", t.momentum_switch_iter);
    r.read("exaggeration", t.exaggeration);
    r.read("exaggeration_iters", t.exaggeration_iters);
    r.read("seed", t.seed);
    r.finish();
}

} // namespace

RunConfig::RunConfig() {
    pretrain.epochs = 10;
    opt.epochs = 10;
    ewc.grid = log_grid(1e12, 1e5, 8);
}

void RunConfig::validate() const {
    if (run_name.empty() || run_name.find('/') != std::string::npos)
        fail(ErrorKind::Config, "run_name must be a nonempty single path component");
    model.validate();
    pretrain.validate();
    opt.validate();
    data.arith.dist.validate();
    if (data.arith.n_train == 0 || data.arith.n_test == 0) fail(ErrorKind::Config, "arithmetic sets must be nonempty");
    data.corpus_a.validate();
    data.corpus_b.validate();
    if (data.corpus_a.grammar != Grammar::A || data.corpus_b.grammar != Grammar::B)
        fail(ErrorKind::Config, "corpus_a must use grammar A and corpus_b grammar B");
    if (data.heldout_sentences == 0) fail(ErrorKind::Config, "heldout_sentences must be positive");
    if (ewc.lambda && !(*ewc.lambda >= 0.0)) fail(ErrorKind::Config, "ewc.lambda must be >= 0");
    if (ewc.fisher_samples == 0) fail(ErrorKind::Config, "ewc.fisher_samples must be positive");
    if (ewc.grid.empty()) fail(ErrorKind::Config, "ewc.grid must be nonempty");
    for (double l : ewc.grid)
        if (!(l > 0.0) || !std::isfinite(l)) fail(ErrorKind::Config, "ewc.grid entries must be positive and finite");
    if (!(ewc.select_ratio >= 1.0) || !std::isfinite(ewc.select_ratio)) fail(ErrorKind::Config, "ewc.select_ratio must be >= 1");
    if (ewc.select_window == 0) fail(ErrorKind::Config, "ewc.select_window must be positive");
    if (analysis.layer < 0 || analysis.layer >= model.n_layers) fail(ErrorKind::Config, "analysis.layer out of range");
    if (analysis.vital_n == 0) fail(ErrorKind::Config, "analysis.vital_n must be positive");
    analysis.tsne.validate();
    if (seeds.empty()) fail(ErrorKind::Config, "seeds must be nonempty");
}

RunConfig RunConfig::for_seed(std::uint64_t seed) const {
    RunConfig c = *this;
    c.model.seed = c.pretrain.seed = c.opt.seed = c.analysis.tsne.seed = seed;
    return c;
}

json to_json(const ModelConfig& c) {
    return {{"n_layers", c.n_layers}, {"n_heads", c.n_heads}, {"d_model", c.d_model}, {"d_ffn", c.d_ffn},
            {"max_seq", c.max_seq}, {"vocab_size", c.vocab_size}, {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig c;
    read_model(j, "model_config", c);
    c.validate();
    return c;
}

json to_json(const RunConfig& c) {
    return {{"run_name", c.run_name},
            {"model", to_json(c.model)},
            {"pretrain", opt_json(c.pretrain)},
            {"opt", opt_json(c.opt)},
            {"data",
             {{"arith",
               {{"n_train", c.data.arith.n_train}, {"n_test", c.data.arith.n_test},
                {"dist", c.data.arith.dist.probs}, {"seed", c.data.arith.seed}}},
              {"corpus_a", corpus_json(c.data.corpus_a)},
              {"corpus_b", corpus_json(c.data.corpus_b)},
              {"heldout_sentences", c.data.heldout_sentences}}},
            {"ewc",
             {{"lambda", c.ewc.lambda ? json(*c.ewc.lambda) : json(nullptr)},
              {"fisher_samples", c.ewc.fisher_samples},
              {"grid", c.ewc.grid},
              {"select_ratio", c.ewc.select_ratio},
              {"select_window", c.ewc.select_window}}},
            {"analysis", {{"layer", c.analysis.layer}, {"vital_n", c.analysis.vital_n}, {"tsne", tsne_json(c.analysis.tsne)}}},
            {"seeds", c.seeds},
            {"output_dir", c.output_dir.generic_string()}};
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    ObjectReader r(j, "config");
    r.read("run_name", c.run_name);
    if (const auto* m = r.child("model")) read_model(*m, r.path("model"), c.model);
    if (const auto* o = r.child("pretrain")) read_opt(*o, r.path("pretrain"), c.pretrain);
    if (const auto* o = r.child("opt")) read_opt(*o, r.path("opt"), c.opt);
    if (const auto* d = r.child("data")) {
        ObjectReader dr(*d, r.path("data"));
        if (const auto* a = dr.child("arith")) {
            ObjectReader ar(*a, dr.path("arith"));
            ar.read("n_train", c.data.arith.n_train);
            ar.read("n_test", c.data.arith.n_test);
            ar.read("dist", c.data.arith.dist.probs);
            ar.read("seed", c.data.arith.seed);
            ar.finish();
        }
        if (const auto* ca = dr.child("corpus_a")) read_corpus(*ca, dr.path("corpus_a"), c.data.corpus_a);
        if (const auto* cb = dr.child("corpus_b")) read_corpus(*cb, dr.path("corpus_b"), c.data.corpus_b);
        dr.read("heldout_sentences", c.data.heldout_sentences);
        dr.finish();
    }
    if (const auto* e = r.child("ewc")) {
        ObjectReader er(*e, r.path("ewc"));
        if (const auto* l = er.child("lambda")) {
            if (l->is_null()) c.ewc.lambda.reset();
            else if (l->is_number()) c.ewc.lambda = l->get<double>();
            else fail(ErrorKind::Config, "config.ewc.lambda must be a number or null");
        }
        er.read("fisher_samples", c.ewc.fisher_samples);
        er.read("grid", c.ewc.grid);
        er.read("select_ratio", c.ewc.select_ratio);
        er.read("select_window", c.ewc.select_window);
        er.finish();
    }
    if (const auto* a = r.child("analysis")) {
        ObjectReader ar(*a, r.path("analysis"));
        ar.read("layer", c.analysis.layer);
        ar.read("vital_n", c.analysis.vital_n);
        if (const auto* t = ar.child("tsne")) read_tsne(*t, ar.path("tsne"), c.analysis.tsne);
        ar.finish();
    }
    r.read("seeds", c.seeds);
    std::string out = c.output_dir.generic_string();
    r.read("output_dir", out);
    c.output_dir = out;
    r.finish();
    try {
        c.validate();
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::Config) throw;
        fail(ErrorKind::Config, e.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::Io, "missing file " + path.string());
    json j;
    try {
        j = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(ErrorKind::Config, path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const RunConfig& c, const std::filesystem::path& path) {
    write_text_file(path, to_json(c).dump(2) + '\n');
}

void RunLayout::create() const {
    for (const auto& d : {checkpoints(), traces(), reports(), data()}) std::filesystem::create_directories(d);
}

std::string seed_tag(std::uint64_t seed) { return "seed" + std::to_string(seed); }

std::string lambda_tag(double lambda) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "lambda%.3g", lambda);
    return buf;
}

} // namespace ewclab
