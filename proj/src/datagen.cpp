#include "ewclab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "ewclab/error.hpp"

namespace ewclab {
namespace {

constexpr double kTransitiveProb = 0.6;

std::int64_t pow10(int e) {
    std::int64_t v = 1;
    for (int i = 0; i < e; ++i) v *= 10;
    return v;
}

void append_number(std::vector<int>& ids, std::int64_t v) {
    if (v < 0) ids.push_back(vocab::kMinus);
    const std::string digits = std::to_string(v < 0 ? -v : v);
    for (char ch : digits) ids.push_back(vocab::digit_id(ch - '0'));
}

// Zipf-like weights over a word class: 1, 1/2, 1/3, ...
int draw_word(const std::vector<int>& words, std::mt19937_64& rng) {
    std::vector<double> w(words.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = 1.0 / static_cast<double>(i + 1);
    std::discrete_distribution<std::size_t> pick(w.begin(), w.end());
    return words[pick(rng)];
}

Lexicon make_lexicon(int first) {
    Lexicon lx;
    for (int i = 0; i < 3; ++i) lx.determiners.push_back(first + i);
    for (int i = 3; i < 9; ++i) lx.nouns.push_back(first + i);
    for (int i = 9; i < 15; ++i) lx.verbs.push_back(first + i);
    return lx;
}

bool contains(const std::vector<int>& v, int id) { return std::find(v.begin(), v.end(), id) != v.end(); }

} // namespace

void ExponentDist::validate() const {
    if (probs.empty()) fail(ErrorKind::Config, "exponent distribution has no buckets");
    if (probs.size() > 16) fail(ErrorKind::Config, "exponent distribution has too many buckets");
    double total = 0.0;
    for (double p : probs) {
        if (!(p >= 0.0)) fail(ErrorKind::Config, "exponent bucket probability must be >= 0");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::Config, "exponent bucket probabilities must sum to 1");
}

int exponent_bucket(std::int64_t value) {
    int e = 0;
    for (std::int64_t v = value; v >= 10; v /= 10) ++e;
    return e;
}

std::int64_t sample_operand(const ExponentDist& dist, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    int e = dist.e_max();
    double acc = 0.0;
    for (int i = 0; i < static_cast<int>(dist.probs.size()); ++i) {
        acc += dist.probs[static_cast<std::size_t>(i)];
        if (u < acc) {
            e = i;
            break;
        }
    }
    // Guard against trailing zero-probability buckets when rounding leaves u >= acc.
    while (e > 0 && dist.probs[static_cast<std::size_t>(e)] == 0.0) --e;
    const std::int64_t lo = e == 0 ? 0 : pow10(e);
    std::uniform_int_distribution<std::int64_t> in_bucket(lo, pow10(e + 1) - 1);
    return in_bucket(rng);
}

ArithInstance render_instance(std::int64_t a, Op op, std::int64_t b, int e_max) {
    if (e_max < 0) fail(ErrorKind::Render, "e_max must be >= 0");
    const std::int64_t operand_limit = pow10(e_max + 1);
    if (std::llabs(a) >= operand_limit || std::llabs(b) >= operand_limit)
        fail(ErrorKind::Render, "operand exceeds " + std::to_string(e_max + 1) + " digits");
    const int width = e_max + 2;
    const std::int64_t result = op == Op::Add ? a + b : a - b;
    const std::int64_t magnitude = std::llabs(result);
    if (magnitude >= pow10(width))
        fail(ErrorKind::Render, "result " + std::to_string(result) + " does not fit " + std::to_string(width) + " digits");

    ArithInstance inst{a, op, b, result, {}};
    auto& ids = inst.seq.ids;
    ids.push_back(vocab::kCls);
    append_number(ids, a);
    ids.push_back(op == Op::Add ? vocab::kPlus : vocab::kMinus);
    append_number(ids, b);
    ids.push_back(vocab::kEquals);

    inst.seq.target_ids.push_back(result < 0 ? vocab::kMinus : vocab::kPlus);
    std::int64_t rest = magnitude;
    std::vector<int> digits(static_cast<std::size_t>(width));
    for (int i = width - 1; i >= 0; --i) {
        digits[static_cast<std::size_t>(i)] = vocab::digit_id(static_cast<int>(rest % 10));
        rest /= 10;
    }
    inst.seq.target_ids.insert(inst.seq.target_ids.end(), digits.begin(), digits.end());
    for (std::size_t i = 0; i < inst.seq.target_ids.size(); ++i) {
        inst.seq.mask_positions.push_back(ids.size());
        ids.push_back(vocab::kMask);
    }
    return inst;
}

std::vector<ArithInstance> gen_arith_dataset(std::size_t n, const ExponentDist& dist, std::uint64_t seed) {
    if (n < 1) fail(ErrorKind::InvalidInput, "dataset size must be >= 1");
    dist.validate();
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution coin(0.5);
    std::vector<ArithInstance> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::int64_t a = sample_operand(dist, rng);
        const Op op = coin(rng) ? Op::Sub : Op::Add;
        const std::int64_t b = sample_operand(dist, rng);
        out.push_back(render_instance(a, op, b, dist.e_max()));
    }
    return out;
}

std::vector<TokenSeq> arith_seqs(const std::vector<ArithInstance>& data) {
    std::vector<TokenSeq> out;
    out.reserve(data.size());
    for (const auto& d : data) out.push_back(d.seq);
    return out;
}

std::string to_string(Grammar g) { return g == Grammar::A ? "A" : "B"; }

Grammar grammar_from_string(const std::string& s) {
    if (s == "A") return Grammar::A;
    if (s == "B") return Grammar::B;
    fail(ErrorKind::Config, "unknown grammar '" + s + "' (expected A or B)");
}

void CorpusSpec::validate() const {
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) fail(ErrorKind::Config, "mask_rate must lie in (0, 1)");
    if (n_sentences < 1) fail(ErrorKind::Config, "n_sentences must be >= 1");
    if (clauses_per_record < 1) fail(ErrorKind::Config, "clauses_per_record must be >= 1");
}

const Lexicon& lexicon(Grammar g) {
    static const Lexicon a = make_lexicon(vocab::kFirstWord);
    static const Lexicon b = make_lexicon(vocab::kFirstWord + 15);
    return g == Grammar::A ? a : b;
}

std::vector<TokenSeq> gen_text_corpus(const CorpusSpec& spec) {
    spec.validate();
    const Lexicon& lx = lexicon(spec.grammar);
    std::mt19937_64 rng(spec.seed * 2 + (spec.grammar == Grammar::A ? 0 : 1));
    std::bernoulli_distribution transitive(kTransitiveProb);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    std::vector<TokenSeq> out;
    out.reserve(spec.n_sentences);
    for (std::size_t s = 0; s < spec.n_sentences; ++s) {
        std::vector<int> ids{vocab::kCls};
        for (int c = 0; c < spec.clauses_per_record; ++c) {
            ids.push_back(draw_word(lx.determiners, rng));
            ids.push_back(draw_word(lx.nouns, rng));
            ids.push_back(draw_word(lx.verbs, rng));
            if (transitive(rng)) {
                ids.push_back(draw_word(lx.determiners, rng));
                ids.push_back(draw_word(lx.nouns, rng));
            }
            ids.push_back(vocab::kSep);
        }
        // Stochastic rounding keeps the expected mask count at rate * eligible.
        const std::size_t eligible = ids.size() - 1;
        const double want = spec.mask_rate * static_cast<double>(eligible);
        std::size_t k = static_cast<std::size_t>(std::floor(want + unit(rng)));
        k = std::clamp<std::size_t>(k, 1, eligible);
        std::vector<std::size_t> pos(eligible);
        std::iota(pos.begin(), pos.end(), std::size_t{1});
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, eligible - 1);
            std::swap(pos[i], pos[pick(rng)]);
        }
        pos.resize(k);
        std::sort(pos.begin(), pos.end());
        TokenSeq seq;
        for (std::size_t p : pos) {
            seq.target_ids.push_back(ids[p]);
            ids[p] = vocab::kMask;
        }
        seq.ids = std::move(ids);
        seq.mask_positions = std::move(pos);
        out.push_back(std::move(seq));
    }
    return out;
}

std::vector<int> unmask(const TokenSeq& seq) {
    std::vector<int> ids = seq.ids;
    for (std::size_t i = 0; i < seq.mask_positions.size(); ++i) ids[seq.mask_positions[i]] = seq.target_ids[i];
    return ids;
}

bool parses(std::span<const int> ids, Grammar g) {
    const Lexicon& lx = lexicon(g);
    if (ids.empty() || ids[0] != vocab::kCls) return false;
    std::size_t i = 1;
    auto take = [&](const std::vector<int>& cls) {
        if (i < ids.size() && contains(cls, ids[i])) {
            ++i;
            return true;
        }
        return false;
    };
    bool any = false;
    while (i < ids.size()) {
        if (!take(lx.determiners) || !take(lx.nouns) || !take(lx.verbs)) return false;
        if (take(lx.determiners) && !take(lx.nouns)) return false;
        if (i >= ids.size() || ids[i] != vocab::kSep) return false;
        ++i;
        any = true;
    }
    return any;
}

} // namespace ewclab
