#pragma once

// Fixed 48-entry vocabulary. Ids 18..47 are the corpus words: grammar A's
// lexicon (determiners, nouns, verbs) followed by grammar B's.

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ewclab::vocab {

inline constexpr int kPad = 0;
inline constexpr int kMask = 1;
inline constexpr int kCls = 2;
inline constexpr int kSep = 3;
inline constexpr int kPlus = 4;
inline constexpr int kMinus = 5;
inline constexpr int kEquals = 6;
inline constexpr int kDot = 7;
inline constexpr int kDigit0 = 8;
inline constexpr int kFirstWord = 18;
inline constexpr int kWordCount = 30;
inline constexpr int kSize = 48;

inline constexpr std::array<std::string_view, kWordCount> kWords = {
    // grammar A
    "the", "a", "one",
    "cat", "dog", "bird", "fish", "horse", "mouse",
    "sees", "likes", "chases", "finds", "hears", "bites",
    // grammar B
    "every", "some", "that",
    "king", "queen", "poet", "judge", "pilot", "nurse",
    "meets", "helps", "trusts", "calls", "greets", "thanks",
};

std::string_view surface(int id);

constexpr int digit_id(int d) { return kDigit0 + d; }
constexpr bool is_digit(int id) { return id >= kDigit0 && id < kDigit0 + 10; }
constexpr int digit_value(int id) { return id - kDigit0; }

// Greedy longest match over the table, starting with [CLS]. ASCII spaces
// separate tokens and are dropped. Throws Tokenization on unknown symbols.
std::vector<int> tokenize(std::string_view text);

// Space-joined surfaces; the inverse of tokenize up to whitespace.
std::string detokenize(std::span<const int> ids, bool skip_cls = true);

} // namespace ewclab::vocab
