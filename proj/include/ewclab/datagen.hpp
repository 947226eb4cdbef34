#pragma once

// Synthetic corpora: integer add/sub problems whose operand magnitudes follow
// a powers-of-ten bucket distribution, and two small disjoint-lexicon
// grammars standing in for general linguistic tasks.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ewclab/model.hpp"

namespace ewclab {

struct ExponentDist {
    // probs[e] is the mass of bucket e: [0, 10) for e = 0, [10^e, 10^(e+1)) above.
    std::vector<double> probs{0.30, 0.30, 0.20, 0.15, 0.05};

    int e_max() const { return static_cast<int>(probs.size()) - 1; }
    void validate() const;
    friend bool operator==(const ExponentDist&, const ExponentDist&) = default;
};

enum class Op { Add, Sub };

struct ArithInstance {
    std::int64_t a = 0;
    Op op = Op::Add;
    std::int64_t b = 0;
    std::int64_t result = 0;
    TokenSeq seq;

    friend bool operator==(const ArithInstance&, const ArithInstance&) = default;
};

// Bucket of a nonnegative operand under the bucket rule above.
int exponent_bucket(std::int64_t value);

std::int64_t sample_operand(const ExponentDist& dist, std::mt19937_64& rng);

// "[CLS] a op b = [MASK] x (W+1)" with W = e_max + 2 result digits; the mask
// targets are the sign ('+' for zero) and the zero-padded magnitude.
ArithInstance render_instance(std::int64_t a, Op op, std::int64_t b, int e_max = 4);

std::vector<ArithInstance> gen_arith_dataset(std::size_t n, const ExponentDist& dist, std::uint64_t seed);

std::vector<TokenSeq> arith_seqs(const std::vector<ArithInstance>& data);

enum class Grammar { A, B };

std::string to_string(Grammar g);
Grammar grammar_from_string(const std::string& s);

struct CorpusSpec {
    Grammar grammar = Grammar::A;
    std::size_t n_sentences = 2000;
    double mask_rate = 0.15;
    std::uint64_t seed = 0;
    // Each record packs this many clauses, each followed by [SEP].
    int clauses_per_record = 4;

    void validate() const;
    friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

struct Lexicon {
    std::vector<int> determiners, nouns, verbs;
};

const Lexicon& lexicon(Grammar g);

std::vector<TokenSeq> gen_text_corpus(const CorpusSpec& spec);

// Restores the masked tokens of a record.
std::vector<int> unmask(const TokenSeq& seq);

// True when ids (after [CLS]) are clauses "Det Noun Verb [Det Noun]" each
// terminated by [SEP], drawn from the grammar's lexicon.
bool parses(std::span<const int> ids, Grammar g);

} // namespace ewclab
