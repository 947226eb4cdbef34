#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "ewclab/datagen.hpp"
#include "ewclab/error.hpp"
#include "ewclab/evalanalysis.hpp"

using namespace ewclab;

namespace {

std::vector<int> tokens(const std::string& sign_digits) {
    std::vector<int> t{sign_digits[0] == '-' ? vocab::kMinus : vocab::kPlus};
    for (std::size_t i = 1; i < sign_digits.size(); ++i) t.push_back(vocab::digit_id(sign_digits[i] - '0'));
    return t;
}

ParamPointSet two_clusters(std::size_t per_cluster, std::size_t dim, double sigma, double separation, std::uint64_t seed) {
    ParamPointSet ps;
    ps.dim = dim;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (int c = 0; c < 2; ++c)
        for (std::size_t i = 0; i < per_cluster; ++i) {
            for (std::size_t k = 0; k < dim; ++k) ps.points.push_back((k == 0 && c == 1 ? separation : 0.0) + noise(rng));
            ps.labels.push_back(c == 0 ? "left" : "right");
        }
    return ps;
}

ModelConfig tiny(std::uint64_t seed) {
    ModelConfig c;
    c.n_layers = 2;
    c.d_model = 8;
    c.d_ffn = 8;
    c.seed = seed;
    return c;
}

} // namespace

TEST_CASE("decode_numeral") {
    CHECK(decode_numeral(tokens("+000019")) == 19);
    CHECK(decode_numeral(tokens("-000004")) == -4);
    CHECK(decode_numeral(tokens("+000000")) == 0);
    CHECK(decode_numeral(tokens("-000000")) == 0);
    const std::vector<int> bad{vocab::kPlus, vocab::digit_id(1), vocab::kFirstWord};
    CHECK_THROWS_AS(decode_numeral(bad), Error);
    const std::vector<int> no_sign{vocab::digit_id(1), vocab::digit_id(2)};
    try {
        decode_numeral(no_sign);
        FAIL("expected a decode error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Decode);
    }
}

TEST_CASE("ln_rmse") {
    const std::vector<std::int64_t> truth{3, -7, 100, 0};
    std::vector<std::int64_t> off{4, -8, 101, 1};
    CHECK(ln_rmse(off, truth) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(ln_rmse(truth, truth) == doctest::Approx(std::log(1e-8)));
    CHECK(ln_rmse(truth, truth) == doctest::Approx(-18.420680743952367));
    const std::vector<std::int64_t> p1{10}, t1{0};
    CHECK(ln_rmse(p1, t1) == doctest::Approx(std::log(10.0)));
    CHECK(ln_rmse(p1, t1, LnRmseMode::RmseOfLog) == doctest::Approx(std::log(11.0)));
    CHECK_THROWS_AS(ln_rmse(std::vector<std::int64_t>{1}, std::vector<std::int64_t>{1, 2}), Error);
    CHECK_THROWS_AS(ln_rmse(std::vector<std::int64_t>{}, std::vector<std::int64_t>{}), Error);
}

TEST_CASE("ln_rmse invariances") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<std::int64_t> val(-5000, 5000);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<std::int64_t> p(20), t(20);
        for (auto& x : p) x = val(rng);
        for (auto& x : t) x = val(rng);
        const double base = ln_rmse(p, t);
        std::vector<std::size_t> perm(20);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng);
        std::vector<std::int64_t> pp(20), tp(20), ps(20), tsh(20);
        const std::int64_t shift = val(rng);
        for (std::size_t i = 0; i < 20; ++i) {
            pp[i] = p[perm[i]];
            tp[i] = t[perm[i]];
            ps[i] = p[i] + shift;
            tsh[i] = t[i] + shift;
        }
        CHECK(ln_rmse(pp, tp) == doctest::Approx(base).epsilon(1e-12));
        CHECK(ln_rmse(ps, tsh) == doctest::Approx(base).epsilon(1e-12));
    }
}

TEST_CASE("heldout_mlm_loss") {
    const ModelParams p = build_model(ModelConfig{});
    const ModelParams copy = p;
    CorpusSpec spec;
    spec.n_sentences = 150;
    spec.seed = 2;
    const auto corpus = gen_text_corpus(spec);
    const double loss = heldout_mlm_loss(p, corpus);
    CHECK(p == copy);
    CHECK(loss >= 0.0);
    CHECK(std::fabs(loss - std::log(48.0)) <= 0.3);
    double direct = 0.0;
    for (const auto& s : corpus) direct += mlm_loss(p, s);
    CHECK(loss == doctest::Approx(direct / 150.0).epsilon(1e-12));
    CHECK(heldout_mlm_loss(p, corpus, 7) == doctest::Approx(loss).epsilon(1e-12));
    CHECK_THROWS_AS(heldout_mlm_loss(p, std::span<const TokenSeq>{}), Error);
}

TEST_CASE("evaluate_arith") {
    const ModelParams p = build_model(tiny(1));
    const auto data = gen_arith_dataset(30, ExponentDist{}, 6);
    const ArithEval e = evaluate_arith(p, data);
    REQUIRE(e.samples.size() == data.size());
    std::vector<std::int64_t> preds, truths;
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(e.samples[i].a == data[i].a);
        CHECK(e.samples[i].truth == data[i].result);
        CHECK(std::llabs(e.samples[i].prediction) < 1000000);
        preds.push_back(e.samples[i].prediction);
        truths.push_back(e.samples[i].truth);
    }
    CHECK(e.ln_rmse == ln_rmse(preds, truths));
}

TEST_CASE("collect_layer_points") {
    const ModelParams a = build_model(tiny(1)), b = build_model(tiny(2));
    const ParamPointSet ps = collect_layer_points({{"x", a}, {"y", b}}, 1);
    CHECK(ps.dim == 8);
    CHECK(ps.size() == 2 * 4 * 8);
    CHECK(ps.points.size() == ps.size() * ps.dim);
    CHECK(ps.layer == 1);
    CHECK(std::count(ps.labels.begin(), ps.labels.end(), "x") == 32);
    // First point: column 0 of layer1 wk for task x.
    const Tensor& wk = a.at("layer1.attn.wk");
    for (std::size_t k = 0; k < 8; ++k) CHECK(ps.points[k] == wk.data[k * 8]);

    const ParamPointSet dup = collect_layer_points({{"p", a}, {"q", a}}, 0);
    const std::size_t half = dup.size() / 2;
    CHECK(std::equal(dup.points.begin(), dup.points.begin() + static_cast<long>(half * dup.dim),
                     dup.points.begin() + static_cast<long>(half * dup.dim)));

    ModelConfig other = tiny(3);
    other.d_ffn = 16;
    CHECK_THROWS_AS(collect_layer_points({{"x", a}, {"z", build_model(other)}}, 0), Error);
    CHECK_THROWS_AS(collect_layer_points({{"x", a}}, 2), Error);
    CHECK_THROWS_AS(collect_layer_points({}, 0), Error);
}

TEST_CASE("t-SNE separates two clusters") {
    const ParamPointSet ps = two_clusters(100, 50, 0.1, 5.0, 1);
    TsneConfig cfg;
    cfg.seed = 4;
    const TsneResult r = tsne(ps, cfg);
    CHECK(r.coords.size() == 2 * ps.size());
    CHECK(silhouette(r.coords, 2, ps.labels) >= 0.8);
    CHECK(r.kl_final < r.kl_initial);
    for (double pp : r.point_perplexity) CHECK(std::fabs(pp - r.perplexity) <= 1e-3 * r.perplexity);
    const TsneResult again = tsne(ps, cfg);
    CHECK(again.coords == r.coords);
}

TEST_CASE("t-SNE edge cases") {
    ParamPointSet ps = two_clusters(6, 5, 1.0, 3.0, 2);
    TsneConfig cfg;
    cfg.iters = 300;
    const TsneResult capped = tsne(ps, cfg);
    CHECK(capped.perplexity == doctest::Approx(11.0 / 3.0));
    CHECK(capped.kl_final < capped.kl_initial);

    // Two identical points among distinct others.
    std::copy(ps.row(0), ps.row(0) + ps.dim, ps.points.begin() + static_cast<long>(ps.dim));
    const TsneResult dup = tsne(ps, cfg);
    bool finite = true;
    for (double v : dup.coords) finite = finite && std::isfinite(v);
    CHECK(finite);

    ParamPointSet huge = ps;
    for (double& v : huge.points) v *= 1e200;
    try {
        tsne(huge, cfg);
        FAIL("expected a degeneracy error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Degeneracy);
        CHECK(std::string(e.what()).find("point") != std::string::npos);
    }

    ParamPointSet three = ps;
    three.labels.resize(3);
    three.points.resize(3 * ps.dim);
    CHECK_THROWS_AS(tsne(three, cfg), Error);
    TsneConfig bad;
    bad.perplexity = 1.0;
    CHECK_THROWS_AS(tsne(ps, bad), Error);
    bad = TsneConfig{};
    bad.iters = 0;
    CHECK_THROWS_AS(tsne(ps, bad), Error);
}

TEST_CASE("silhouette") {
    const std::vector<double> c{0, 0, 0, 1, 10, 0, 10, 1};
    const std::vector<std::string> l{"a", "a", "b", "b"};
    const double a = 1.0, b = (10.0 + std::sqrt(101.0)) / 2.0;
    CHECK(silhouette(c, 2, l) == doctest::Approx(1.0 - a / b));
    const std::vector<std::string> one{"a", "a", "a", "a"};
    CHECK_THROWS_AS(silhouette(c, 2, one), Error);
}
