#include "doctest.h"

#include <cmath>
#include <set>

#include "ewclab/datagen.hpp"
#include "ewclab/dataio.hpp"
#include "ewclab/error.hpp"
#include "ewclab/evalanalysis.hpp"

using namespace ewclab;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("no ewclab::Error thrown");
    return ErrorKind::Io;
}

std::vector<int> masked_targets_of(std::int64_t result, int width) {
    std::vector<int> t{result < 0 ? vocab::kMinus : vocab::kPlus};
    std::string digits = std::to_string(result < 0 ? -result : result);
    digits.insert(0, static_cast<std::size_t>(width) - digits.size(), '0');
    for (char c : digits) t.push_back(vocab::digit_id(c - '0'));
    return t;
}

} // namespace

TEST_CASE("operand buckets") {
    CHECK(exponent_bucket(0) == 0);
    CHECK(exponent_bucket(9) == 0);
    CHECK(exponent_bucket(10) == 1);
    CHECK(exponent_bucket(99999) == 4);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto v = sample_operand(ExponentDist{{1.0}}, rng);
        CHECK((v >= 0 && v <= 9));
    }
    for (int i = 0; i < 1000; ++i) {
        const auto v = sample_operand(ExponentDist{{0.0, 0.0, 1.0}}, rng);
        CHECK((v >= 100 && v <= 999));
    }
}

TEST_CASE("operand bucket frequencies follow the distribution") {
    const ExponentDist dist;
    std::mt19937_64 rng(7);
    std::vector<double> freq(dist.probs.size(), 0.0);
    const int n = 20000;
    for (int i = 0; i < n; ++i) freq[static_cast<std::size_t>(exponent_bucket(sample_operand(dist, rng)))] += 1.0 / n;
    double tv = 0.0;
    for (std::size_t e = 0; e < freq.size(); ++e) tv += 0.5 * std::fabs(freq[e] - dist.probs[e]);
    CHECK(tv <= 0.02);
}

TEST_CASE("bad distributions are rejected") {
    CHECK(kind_of([] { ExponentDist{{0.5, 0.4}}.validate(); }) == ErrorKind::Config);
    CHECK(kind_of([] { ExponentDist{{}}.validate(); }) == ErrorKind::Config);
    CHECK(kind_of([] { ExponentDist{{1.5, -0.5}}.validate(); }) == ErrorKind::Config);
    CHECK(kind_of([] { gen_arith_dataset(0, ExponentDist{}, 1); }) == ErrorKind::InvalidInput);
}

TEST_CASE("render_instance") {
    const auto x = render_instance(12, Op::Add, 7);
    CHECK(x.result == 19);
    CHECK(x.seq.ids == std::vector<int>{2, 9, 10, 4, 15, 6, 1, 1, 1, 1, 1, 1, 1});
    CHECK(x.seq.target_ids == std::vector<int>{4, 8, 8, 8, 8, 9, 17});
    CHECK(x.seq.mask_positions == std::vector<std::size_t>{6, 7, 8, 9, 10, 11, 12});

    const auto y = render_instance(5, Op::Sub, 9);
    CHECK(y.result == -4);
    CHECK(y.seq.target_ids == masked_targets_of(-4, 6));
    CHECK(decode_numeral(y.seq.target_ids) == -4);

    const auto z = render_instance(99999, Op::Add, 99999);
    CHECK(z.result == 199998);
    CHECK(decode_numeral(z.seq.target_ids) == 199998);
    CHECK(render_instance(0, Op::Sub, 0).seq.target_ids.front() == vocab::kPlus);
    CHECK(kind_of([] { render_instance(100000, Op::Add, 1); }) == ErrorKind::Render);
    CHECK(kind_of([] { render_instance(1, Op::Sub, 100000); }) == ErrorKind::Render);
}

TEST_CASE("every small instance round-trips through decoding") {
    for (int a = 0; a < 100; ++a)
        for (int b = 0; b < 100; ++b)
            for (Op op : {Op::Add, Op::Sub}) {
                const auto x = render_instance(a, op, b, 1);
                CHECK(x.seq.target_ids.size() == 4);
                REQUIRE(decode_numeral(x.seq.target_ids) == (op == Op::Add ? a + b : a - b));
                const auto text = vocab::detokenize(std::span(x.seq.ids).first(x.seq.mask_positions.front()));
                REQUIRE(vocab::tokenize(text) == std::vector<int>(x.seq.ids.begin(),
                                                                  x.seq.ids.begin() + static_cast<long>(x.seq.mask_positions.front())));
            }
}

TEST_CASE("generated datasets are deterministic and well formed") {
    const auto a = gen_arith_dataset(500, ExponentDist{}, 3);
    CHECK(a == gen_arith_dataset(500, ExponentDist{}, 3));
    CHECK_FALSE(a == gen_arith_dataset(500, ExponentDist{}, 4));
    std::size_t subs = 0;
    for (const auto& x : a) {
        CHECK(x.result == (x.op == Op::Add ? x.a + x.b : x.a - x.b));
        CHECK(x.seq.ids.size() <= 32);
        CHECK_NOTHROW(x.seq.validate());
        CHECK(decode_numeral(x.seq.target_ids) == x.result);
        subs += x.op == Op::Sub;
    }
    CHECK((subs > 200 && subs < 300));
}

TEST_CASE("text corpora") {
    const Lexicon& la = lexicon(Grammar::A);
    const Lexicon& lb = lexicon(Grammar::B);
    std::set<int> words_a, words_b;
    for (const auto* v : {&la.determiners, &la.nouns, &la.verbs}) words_a.insert(v->begin(), v->end());
    for (const auto* v : {&lb.determiners, &lb.nouns, &lb.verbs}) words_b.insert(v->begin(), v->end());
    for (int w : words_a) CHECK(words_b.count(w) == 0);
    CHECK(words_a.size() == 15);
    CHECK(words_b.size() == 15);

    for (Grammar g : {Grammar::A, Grammar::B}) {
        CorpusSpec spec;
        spec.grammar = g;
        spec.n_sentences = 10000;
        spec.seed = 5;
        const auto corpus = gen_text_corpus(spec);
        CHECK(corpus == gen_text_corpus(spec));
        std::size_t masked = 0, eligible = 0;
        bool all_parse = true, all_masked = true, no_mask_cls = true;
        for (const auto& s : corpus) {
            const auto ids = unmask(s);
            all_parse = all_parse && parses(ids, g) && !parses(ids, g == Grammar::A ? Grammar::B : Grammar::A);
            all_masked = all_masked && !s.mask_positions.empty();
            for (std::size_t p : s.mask_positions) no_mask_cls = no_mask_cls && p != 0;
            masked += s.mask_positions.size();
            eligible += s.ids.size() - 1;
        }
        CHECK(all_parse);
        CHECK(all_masked);
        CHECK(no_mask_cls);
        CHECK(std::fabs(static_cast<double>(masked) / static_cast<double>(eligible) - 0.15) <= 0.01);
    }
    CHECK(grammar_from_string(to_string(Grammar::B)) == Grammar::B);
    CHECK(kind_of([] { grammar_from_string("C"); }) == ErrorKind::Config);
    CHECK(kind_of([] {
              CorpusSpec s;
              s.mask_rate = 0.0;
              gen_text_corpus(s);
          }) == ErrorKind::Config);
}

TEST_CASE("jsonl round-trips") {
    const auto data = gen_arith_dataset(50, ExponentDist{}, 2);
    CHECK(parse_dataset_jsonl(dataset_jsonl(data)) == data);
    CorpusSpec spec;
    spec.n_sentences = 30;
    const auto corpus = gen_text_corpus(spec);
    CHECK(parse_corpus_jsonl(corpus_jsonl(corpus)) == corpus);

    std::string bad = dataset_jsonl({render_instance(1, Op::Add, 2)});
    bad.replace(bad.find("\"result\":3"), 10, "\"result\":4");
    CHECK(kind_of([&] { parse_dataset_jsonl(bad); }) == ErrorKind::InvalidInput);
    CHECK(kind_of([] { parse_corpus_jsonl("{\"ids\":[2,1]\n"); }) == ErrorKind::InvalidInput);
}
