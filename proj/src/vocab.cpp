#include "ewclab/vocab.hpp"

#include "ewclab/error.hpp"

namespace ewclab::vocab {
namespace {

constexpr std::array<std::string_view, 18> kFixed = {
    "[PAD]", "[MASK]", "[CLS]", "[SEP]", "+", "-", "=", ".",
    "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
};

} // namespace

std::string_view surface(int id) {
    if (id >= 0 && id < kFirstWord) return kFixed[static_cast<std::size_t>(id)];
    if (id >= kFirstWord && id < kSize) return kWords[static_cast<std::size_t>(id - kFirstWord)];
    fail(ErrorKind::InvalidInput, "token id " + std::to_string(id) + " outside vocabulary");
}

std::vector<int> tokenize(std::string_view text) {
    std::vector<int> ids{kCls};
    std::size_t pos = 0;
    while (pos < text.size()) {
        if (text[pos] == ' ') {
            ++pos;
            continue;
        }
        int best = -1;
        std::size_t best_len = 0;
        for (int id = 0; id < kSize; ++id) {
            const std::string_view s = surface(id);
            if (s.size() > best_len && text.substr(pos, s.size()) == s) {
                best = id;
                best_len = s.size();
            }
        }
        if (best < 0)
            fail(ErrorKind::Tokenization, "unknown symbol '" + std::string(1, text[pos]) + "' at offset " +
                                              std::to_string(pos));
        ids.push_back(best);
        pos += best_len;
    }
    return ids;
}

std::string detokenize(std::span<const int> ids, bool skip_cls) {
    std::string out;
    for (int id : ids) {
        if (skip_cls && id == kCls) continue;
        if (!out.empty()) out += ' ';
        out += surface(id);
    }
    return out;
}

} // namespace ewclab::vocab
