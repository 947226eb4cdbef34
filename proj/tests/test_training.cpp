#include "doctest.h"

#include <cmath>
#include <random>

#include "ewclab/datagen.hpp"
#include "ewclab/error.hpp"
#include "ewclab/evalanalysis.hpp"
#include "ewclab/training.hpp"
#include "support/reference_adam.hpp"

using namespace ewclab;

namespace {

ModelConfig tiny(std::uint64_t seed = 2) {
    ModelConfig c;
    c.n_layers = 1;
    c.d_model = 8;
    c.d_ffn = 16;
    c.seed = seed;
    return c;
}

FisherVector random_fisher(std::size_t n, std::uint64_t seed) {
    FisherVector f;
    f.values.resize(n);
    std::mt19937_64 rng(seed);
    for (double& v : f.values) v = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    return f;
}

ModelParams perturbed(const ModelParams& p, double scale, std::uint64_t seed) {
    ModelParams q = p;
    auto flat = q.flatten();
    std::mt19937_64 rng(seed);
    for (double& x : flat) x += scale * std::normal_distribution<double>()(rng);
    q.unflatten(flat);
    return q;
}

} // namespace

TEST_CASE("penalty values") {
    const ModelParams ref = build_model(tiny());
    EwcConfig ewc{2.0, ref, random_fisher(ref.flat_len(), 1)};
    CHECK(ewc_penalty(ref, ewc) == 0.0);

    FisherVector single;
    single.values.assign(ref.flat_len(), 0.0);
    single.values[17] = 3.0;
    ModelParams moved = ref;
    auto flat = moved.flatten();
    flat[17] += 0.5;
    flat[18] += 4.0;  // zero Fisher: no cost
    moved.unflatten(flat);
    CHECK(ewc_penalty(moved, EwcConfig{2.0, ref, single}) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(ewc_penalty(moved, EwcConfig{0.0, ref, single}) == 0.0);
    CHECK(fisher_distance(moved, ref, single) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK_THROWS_AS(ewc_penalty(moved, EwcConfig{-1.0, ref, single}), Error);
    FisherVector wrong;
    wrong.values.assign(3, 1.0);
    CHECK_THROWS_AS(ewc_penalty(moved, EwcConfig{1.0, ref, wrong}), Error);
}

TEST_CASE("penalty gradient is lambda F (theta - theta*)") {
    const ModelParams ref = build_model(tiny());
    for (double lambda : {0.0, 0.3, 7.0, 1e4}) {
        EwcConfig ewc{lambda, ref, random_fisher(ref.flat_len(), 5)};
        ModelParams p = perturbed(ref, 0.1, 9);
        p.set_requires_grad(true);
        {
            Graph g;
            g.backward(ewc_penalty(g, bind(g, p), ewc));
        }
        const auto grad = p.flat_grad();
        const auto theta = p.flatten(), anchor = ref.flatten();
        double worst = 0.0;
        for (std::size_t i = 0; i < grad.size(); ++i) {
            const double want = lambda * ewc.fisher.values[i] * (theta[i] - anchor[i]);
            worst = std::max(worst, std::fabs(grad[i] - want) / std::max(1.0, std::fabs(want)));
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("training trajectory matches a reference optimizer") {
    const ModelParams ref = build_model(tiny(3));
    const ModelParams start = perturbed(ref, 0.05, 4);
    const TokenSeq seq = render_instance(31, Op::Sub, 7).seq;
    OptConfig opt;
    opt.lr = 5e-3;
    opt.batch_size = 1;
    opt.epochs = 25;
    const EwcConfig ewc{50.0, ref, random_fisher(ref.flat_len(), 6)};
    const auto want = testing::reference_trajectory(start, seq, opt, ewc, 25);
    double worst = 0.0;
    const std::vector<TokenSeq> data{seq};
    train_ewc(start, data, opt, ewc, [&](std::size_t it, const ModelParams& p) {
        const auto got = p.flatten();
        for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::fabs(got[i] - want[it - 1][i]));
    });
    CHECK(worst <= 1e-12);
}

TEST_CASE("zero learning rate leaves parameters unchanged") {
    const ModelParams p = build_model(tiny());
    OptConfig opt;
    opt.lr = 0.0;
    opt.epochs = 2;
    opt.batch_size = 4;
    const auto data = arith_seqs(gen_arith_dataset(8, ExponentDist{}, 1));
    const auto r = train(p, data, opt);
    CHECK(r.params.flatten() == p.flatten());
    CHECK(r.trace.records.size() == 4);
}

TEST_CASE("a single instance can be memorised") {
    ModelConfig c = tiny(7);
    c.d_model = 16;
    c.d_ffn = 32;
    const auto x = render_instance(2, Op::Add, 2);
    const std::vector<TokenSeq> data{x.seq};
    OptConfig opt;
    opt.lr = 1e-2;
    opt.batch_size = 1;
    opt.epochs = 500;
    const auto r = train(build_model(c), data, opt);
    CHECK(r.trace.records.back().ce_loss < 0.01);
    const auto tokens = predict_numeral_tokens(forward_mlm(r.params, x.seq));
    CHECK(decode_numeral(tokens) == 4);
}

TEST_CASE("training is deterministic and lambda zero equals plain training") {
    const ModelParams p = build_model(tiny());
    const auto data = arith_seqs(gen_arith_dataset(40, ExponentDist{}, 2));
    OptConfig opt;
    opt.epochs = 2;
    opt.batch_size = 8;
    opt.seed = 11;
    const auto a = train(p, data, opt);
    const auto b = train(p, data, opt);
    CHECK(a.params == b.params);
    CHECK(a.trace.same_run(b.trace));

    const auto z = train_ewc(p, data, opt, EwcConfig{0.0, p, random_fisher(p.flat_len(), 1)});
    CHECK(z.params == a.params);
    REQUIRE(z.trace.records.size() == a.trace.records.size());
    for (std::size_t i = 0; i < z.trace.records.size(); ++i) {
        CHECK(z.trace.records[i].ce_loss == a.trace.records[i].ce_loss);
        CHECK(z.trace.records[i].ewc_penalty == 0.0);
    }

    const std::vector<double> grid{0.0};
    const auto sweep = lambda_sweep(p, data, opt, p, random_fisher(p.flat_len(), 1), grid);
    REQUIRE(sweep.size() == 1);
    CHECK(sweep[0].params == a.params);

    OptConfig other = opt;
    other.seed = 12;
    CHECK_FALSE(train(p, data, other).params == a.params);
}

TEST_CASE("loss trace bookkeeping") {
    const ModelParams p = build_model(tiny());
    const auto data = arith_seqs(gen_arith_dataset(20, ExponentDist{}, 3));
    OptConfig opt;
    opt.epochs = 3;
    opt.batch_size = 6;
    const auto r = train_ewc(p, data, opt, EwcConfig{10.0, p, random_fisher(p.flat_len(), 2)});
    CHECK(r.trace.records.size() == 12);
    CHECK(r.trace.lambda == 10.0);
    bool ok = true;
    for (std::size_t i = 0; i < r.trace.records.size(); ++i) {
        const auto& rec = r.trace.records[i];
        ok = ok && rec.iteration == i + 1 && rec.ce_loss > 0.0 && rec.ewc_penalty >= 0.0 &&
             std::fabs(rec.total_loss - rec.ce_loss - rec.ewc_penalty) <= 1e-12 * std::max(1.0, rec.total_loss);
    }
    CHECK(ok);
    CHECK(r.trace.records.front().ewc_penalty == 0.0);
    CHECK(head_ce(r.trace, 1) == r.trace.records.front().ce_loss);
    CHECK(tail_ce(r.trace, 1) == r.trace.records.back().ce_loss);
    CHECK_THROWS_AS(head_ce(LossTrace{}, 3), Error);
}

TEST_CASE("bad training inputs") {
    const ModelParams p = build_model(tiny());
    const auto data = arith_seqs(gen_arith_dataset(4, ExponentDist{}, 3));
    OptConfig opt;
    opt.epochs = 0;
    CHECK_THROWS_AS(train(p, data, opt), Error);
    opt.epochs = 1;
    CHECK_THROWS_AS(train(p, std::span<const TokenSeq>{}, opt), Error);
    CHECK_THROWS_AS(train_ewc(p, data, opt, EwcConfig{-2.0, p, random_fisher(p.flat_len(), 1)}), Error);
    CHECK(algorithm_from_string(to_string(Algorithm::Sgd)) == Algorithm::Sgd);
    CHECK_THROWS_AS(algorithm_from_string("rmsprop"), Error);
}

TEST_CASE("aggregate") {
    const std::vector<double> v{0.4, 0.6};
    const auto a = aggregate(v);
    CHECK(a.mean == doctest::Approx(0.5));
    CHECK(a.std == doctest::Approx(0.1));
    CHECK(a.n_runs == 2);
    const std::vector<double> one{3.0};
    CHECK(aggregate(one) == AggregateMetric{3.0, 0.0, 1});
    CHECK_THROWS_AS(aggregate(std::span<const double>{}), Error);

    std::mt19937_64 rng(4);
    std::vector<double> xs(7);
    for (double& x : xs) x = std::normal_distribution<double>()(rng);
    const auto m = aggregate(xs);
    auto shifted = xs;
    for (double& x : shifted) x = 2.0 * x + 5.0;
    const auto ms = aggregate(shifted);
    CHECK(ms.mean == doctest::Approx(2.0 * m.mean + 5.0).epsilon(1e-12));
    CHECK(ms.std == doctest::Approx(2.0 * m.std).epsilon(1e-12));
}

TEST_CASE("log grid and lambda selection") {
    const auto g = log_grid(1e12, 1e5, 8);
    REQUIRE(g.size() == 8);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g[i] == doctest::Approx(std::pow(10.0, 12.0 - i)).epsilon(1e-12));
    CHECK(log_grid(5.0, 1.0, 1) == std::vector<double>{5.0});
    CHECK_THROWS_AS(log_grid(0.0, 1.0, 3), Error);

    auto run = [](double lambda, double tail) {
        SweepRun r;
        r.lambda = lambda;
        for (std::size_t i = 0; i < 5; ++i) r.trace.records.push_back({i + 1, 9.0, 0.0, 9.0});
        for (std::size_t i = 5; i < 10; ++i) r.trace.records.push_back({i + 1, tail, 0.0, tail});
        return r;
    };
    const std::vector<SweepRun> runs{run(1e3, 1.0), run(1e9, 5.0), run(1e6, 1.4), run(1e7, 1.6)};
    CHECK(select_lambda(runs, 1.0, 1.5, 5) == 1e6);
    CHECK(select_lambda(runs, 1.0, 5.0, 5) == 1e9);
    CHECK(select_lambda(runs, 0.1, 1.5, 5) == 1e3);
    CHECK_THROWS_AS(select_lambda(std::span<const SweepRun>{}, 1.0, 1.5, 5), Error);
}

TEST_CASE("stronger consolidation pins harder and converges slower") {
    const ModelParams ref = build_model(tiny(5));
    const ModelParams start = ref;
    const auto data = arith_seqs(gen_arith_dataset(24, ExponentDist{}, 8));
    OptConfig opt;
    opt.epochs = 30;
    opt.batch_size = data.size();
    opt.lr = 5e-3;
    FisherVector f = random_fisher(ref.flat_len(), 3);
    const std::vector<double> grid{1e4, 1e2, 1.0, 1e-2, 0.0};
    const auto runs = lambda_sweep(start, data, opt, ref, f, grid);
    double last_dist = -1.0, last_ce = -1.0;
    for (const auto& r : runs) {
        const double dist = fisher_distance(r.params, ref, f);
        const double ce = r.trace.records.back().ce_loss;
        INFO("lambda " << r.lambda << " distance " << dist << " final ce " << ce);
        CHECK(dist >= last_dist);
        if (last_ce >= 0.0) CHECK(ce <= last_ce + 1e-12);
        last_dist = dist;
        last_ce = ce;
    }
}
