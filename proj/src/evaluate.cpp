#include <algorithm>
#include <cmath>

#include "ewclab/error.hpp"
#include "ewclab/evalanalysis.hpp"

namespace ewclab {

std::int64_t decode_numeral(std::span<const int> tokens) {
    if (tokens.size() < 2) fail(ErrorKind::Decode, "numeral needs a sign and at least one digit");
    if (tokens[0] != vocab::kPlus && tokens[0] != vocab::kMinus)
        fail(ErrorKind::Decode, "numeral sign slot holds '" + std::string(vocab::surface(tokens[0])) + "'");
    std::int64_t v = 0;
    for (std::size_t i = 1; i < tokens.size(); ++i) {
        if (!vocab::is_digit(tokens[i]))
            fail(ErrorKind::Decode, "numeral digit slot " + std::to_string(i) + " holds '" +
                                        std::string(vocab::surface(tokens[i])) + "'");
        v = v * 10 + vocab::digit_value(tokens[i]);
    }
    return tokens[0] == vocab::kMinus ? -v : v;
}

double ln_rmse(std::span<const std::int64_t> preds, std::span<const std::int64_t> truths, LnRmseMode mode) {
    if (preds.empty() || preds.size() != truths.size())
        fail(ErrorKind::InvalidInput, "ln_rmse needs equal-length nonempty inputs");
    auto transform = [mode](std::int64_t x) {
        const double d = static_cast<double>(x);
        if (mode == LnRmseMode::LogOfRmse) return d;
        return std::copysign(std::log1p(std::abs(d)), d);
    };
    double ss = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double e = transform(preds[i]) - transform(truths[i]);
        ss += e * e;
    }
    const double rmse = std::sqrt(ss / static_cast<double>(preds.size()));
    if (mode == LnRmseMode::RmseOfLog) return rmse;
    return std::log(std::max(rmse, kLnRmseFloor));
}

double heldout_mlm_loss(const ModelParams& params, std::span<const TokenSeq> corpus, std::size_t batch_size) {
    if (corpus.empty()) fail(ErrorKind::InvalidInput, "held-out corpus is empty");
    double total = 0.0;
    for (std::size_t start = 0; start < corpus.size(); start += batch_size) {
        const auto chunk = corpus.subspan(start, std::min(batch_size, corpus.size() - start));
        Graph g;
        const BoundParams b = bind_const(g, params);
        total += g.value(mlm_loss(g, b, chunk)).item() * static_cast<double>(chunk.size());
    }
    return total / static_cast<double>(corpus.size());
}

ArithEval evaluate_arith(const ModelParams& params, std::span<const ArithInstance> data, LnRmseMode mode) {
    if (data.empty()) fail(ErrorKind::InvalidInput, "arithmetic eval set is empty");
    std::vector<TokenSeq> seqs;
    for (const auto& d : data) seqs.push_back(d.seq);
    const auto predicted = predict_numeral_tokens(params, seqs);
    ArithEval out;
    std::vector<std::int64_t> preds, truths;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::int64_t p = decode_numeral(predicted[i]);
        out.samples.push_back({data[i].a, data[i].op, data[i].b, data[i].result, p});
        preds.push_back(p);
        truths.push_back(data[i].result);
    }
    out.ln_rmse = ln_rmse(preds, truths, mode);
    return out;
}

} // namespace ewclab
