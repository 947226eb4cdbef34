#include "ewclab/model.hpp"

#include <algorithm>
#include <cmath>

#include "ewclab/error.hpp"

namespace ewclab {
namespace {

constexpr std::size_t kPerLayer = 16;
constexpr double kInitStd = 0.02;
constexpr double kMaskedScore = -1e9;

enum LayerSlot : std::size_t {
    kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
    kLn1Gain, kLn1Bias, kW1, kB1, kW2, kB2, kLn2Gain, kLn2Bias,
};

std::size_t layer_entry(int layer, std::size_t slot) { return 2 + static_cast<std::size_t>(layer) * kPerLayer + slot; }

// [B, T, d] -> [B, H, T, dh]
Var split_heads(Graph& g, Var x, std::size_t b, std::size_t t, std::size_t h, std::size_t dh) {
    return g.swap_axes(g.reshape(x, {b, t, h, dh}), 1, 2);
}

} // namespace

void ModelConfig::validate() const {
    auto bad = [](const std::string& m) { fail(ErrorKind::Config, m); };
    if (n_layers < 1) bad("n_layers must be >= 1");
    if (n_heads < 1) bad("n_heads must be >= 1");
    if (d_model < 1 || d_ffn < 1) bad("d_model and d_ffn must be >= 1");
    if (d_model % n_heads != 0)
        bad("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
    if (max_seq < 1) bad("max_seq must be >= 1");
    if (vocab_size != vocab::kSize) bad("vocab_size is fixed at " + std::to_string(vocab::kSize));
}

void TokenSeq::validate(int vocab_size) const {
    for (int id : ids)
        if (id < 0 || id >= vocab_size) fail(ErrorKind::InvalidInput, "token id " + std::to_string(id) + " out of range");
    if (mask_positions.size() != target_ids.size())
        fail(ErrorKind::InvalidInput, "mask_positions and target_ids differ in length");
    for (std::size_t i = 0; i < mask_positions.size(); ++i) {
        const std::size_t p = mask_positions[i];
        if (p >= ids.size()) fail(ErrorKind::InvalidInput, "mask position past end of sequence");
        if (i > 0 && p <= mask_positions[i - 1]) fail(ErrorKind::InvalidInput, "mask positions not strictly increasing");
        if (ids[p] != vocab::kMask) fail(ErrorKind::InvalidInput, "mask position does not hold [MASK]");
        if (target_ids[i] < 0 || target_ids[i] >= vocab_size) fail(ErrorKind::InvalidInput, "target id out of range");
    }
}

std::size_t ModelParams::flat_len() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.tensor.size();
    return n;
}

std::size_t ModelParams::offset(std::size_t i) const {
    std::size_t n = 0;
    for (std::size_t k = 0; k < i; ++k) n += entries[k].tensor.size();
    return n;
}

const Tensor& ModelParams::at(std::string_view name) const {
    for (const auto& e : entries)
        if (e.name == name) return e.tensor;
    fail(ErrorKind::InvalidInput, "no parameter named " + std::string(name));
}

Tensor& ModelParams::at(std::string_view name) {
    return const_cast<Tensor&>(std::as_const(*this).at(name));
}

std::vector<double> ModelParams::flatten() const {
    std::vector<double> flat;
    flat.reserve(flat_len());
    for (const auto& e : entries) flat.insert(flat.end(), e.tensor.data.begin(), e.tensor.data.end());
    return flat;
}

void ModelParams::unflatten(std::span<const double> flat) {
    if (flat.size() != flat_len())
        fail(ErrorKind::InvalidInput, "unflatten: expected " + std::to_string(flat_len()) + " values, got " +
                                          std::to_string(flat.size()));
    std::size_t off = 0;
    for (auto& e : entries) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), e.tensor.size(), e.tensor.data.begin());
        off += e.tensor.size();
    }
}

std::vector<double> ModelParams::flat_grad() const {
    std::vector<double> flat(flat_len(), 0.0);
    std::size_t off = 0;
    for (const auto& e : entries) {
        if (e.tensor.has_grad()) std::copy(e.tensor.grad.begin(), e.tensor.grad.end(), flat.begin() + static_cast<std::ptrdiff_t>(off));
        off += e.tensor.size();
    }
    return flat;
}

std::pair<std::size_t, std::size_t> ModelParams::layer_range(int layer) const {
    if (layer < 0 || layer >= config.n_layers)
        fail(ErrorKind::InvalidInput, "layer " + std::to_string(layer) + " outside [0, " +
                                          std::to_string(config.n_layers) + ")");
    const std::size_t first = layer_entry(layer, 0);
    const std::size_t begin = offset(first);
    std::size_t end = begin;
    for (std::size_t k = first; k < first + kPerLayer; ++k) end += entries[k].tensor.size();
    return {begin, end};
}

int ModelParams::layer_of(std::size_t flat_index) const {
    for (int l = 0; l < config.n_layers; ++l) {
        const auto [b, e] = layer_range(l);
        if (flat_index >= b && flat_index < e) return l;
    }
    return -1;
}

void ModelParams::set_requires_grad(bool on) {
    for (auto& e : entries) e.tensor.requires_grad = on;
}

void ModelParams::zero_grad() {
    for (auto& e : entries) e.tensor.zero_grad();
}

std::size_t param_count(const ModelConfig& c) {
    const std::size_t v = c.vocab_size, s = c.max_seq, d = c.d_model, f = c.d_ffn;
    const std::size_t attention = 4 * (d * d + d);
    const std::size_t norms = 2 * 2 * d;
    const std::size_t ffn = d * f + f + f * d + d;
    return v * d + s * d + c.n_layers * (attention + norms + ffn) + d * v + v;
}

ModelParams build_model(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    const std::size_t v = config.vocab_size, s = config.max_seq, d = config.d_model, f = config.d_ffn;
    std::uint64_t stream = 0;
    auto weight = [&](std::string name, Shape shape) {
        p.entries.push_back({std::move(name), randn(shape, config.seed * 1000003ULL + stream++, kInitStd)});
    };
    auto filled = [&](std::string name, std::size_t n, double value) {
        p.entries.push_back({std::move(name), full({n}, value)});
    };
    weight("tok_emb", {v, d});
    weight("pos_emb", {s, d});
    for (int l = 0; l < config.n_layers; ++l) {
        const std::string pre = "layer" + std::to_string(l) + ".";
        for (const char* m : {"q", "k", "v", "o"}) {
            weight(pre + "attn.w" + m, {d, d});
            filled(pre + "attn.b" + m, d, 0.0);
        }
        filled(pre + "ln1.gain", d, 1.0);
        filled(pre + "ln1.bias", d, 0.0);
        weight(pre + "ffn.w1", {d, f});
        filled(pre + "ffn.b1", f, 0.0);
        weight(pre + "ffn.w2", {f, d});
        filled(pre + "ffn.b2", d, 0.0);
        filled(pre + "ln2.gain", d, 1.0);
        filled(pre + "ln2.bias", d, 0.0);
    }
    weight("mlm.w", {d, v});
    filled("mlm.b", v, 0.0);
    return p;
}

BoundParams bind(Graph& g, ModelParams& params) {
    BoundParams b{&params.config, {}};
    for (auto& e : params.entries) b.vars.push_back(g.param(e.tensor));
    return b;
}

BoundParams bind_const(Graph& g, const ModelParams& params) {
    BoundParams b{&params.config, {}};
    for (const auto& e : params.entries) b.vars.push_back(g.input(e.tensor));
    return b;
}

Var forward_mlm(Graph& g, const BoundParams& p, std::span<const TokenSeq> batch) {
    const ModelConfig& c = *p.config;
    const std::size_t d = c.d_model, h = c.n_heads, dh = d / h;
    if (batch.empty()) fail(ErrorKind::InvalidInput, "forward_mlm on empty batch");
    std::size_t t = 0;
    for (const auto& s : batch) {
        if (s.ids.empty()) fail(ErrorKind::InvalidInput, "empty token sequence");
        if (s.ids.size() > static_cast<std::size_t>(c.max_seq))
            fail(ErrorKind::InvalidInput, "sequence of length " + std::to_string(s.ids.size()) +
                                              " exceeds max_seq " + std::to_string(c.max_seq));
        t = std::max(t, s.ids.size());
    }
    const std::size_t b = batch.size();

    std::vector<int> ids(b * t, vocab::kPad);
    std::vector<std::size_t> rows;
    bool padded = false;
    for (std::size_t i = 0; i < b; ++i) {
        std::copy(batch[i].ids.begin(), batch[i].ids.end(), ids.begin() + static_cast<std::ptrdiff_t>(i * t));
        padded = padded || batch[i].ids.size() < t;
        for (std::size_t mp : batch[i].mask_positions) {
            if (mp >= batch[i].ids.size()) fail(ErrorKind::InvalidInput, "mask position past end of sequence");
            rows.push_back(i * t + mp);
        }
    }
    std::vector<int> positions(t);
    for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<int>(i);

    Var x = g.embedding(p.vars[0], ids, {b, t});
    x = g.add(x, g.embedding(p.vars[1], positions, {t}));

    std::optional<Var> key_mask;
    if (padded) {
        Tensor m = zeros({b, h, t, t});
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t k = batch[i].ids.size(); k < t; ++k)
                for (std::size_t hh = 0; hh < h; ++hh)
                    for (std::size_t q = 0; q < t; ++q) m.data[((i * h + hh) * t + q) * t + k] = kMaskedScore;
        key_mask = g.constant(std::move(m));
    }
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    for (int l = 0; l < c.n_layers; ++l) {
        auto P = [&](std::size_t slot) { return p.vars[layer_entry(l, slot)]; };
        const Var q = split_heads(g, g.add(g.matmul(x, P(kWq)), P(kBq)), b, t, h, dh);
        const Var k = split_heads(g, g.add(g.matmul(x, P(kWk)), P(kBk)), b, t, h, dh);
        const Var v = split_heads(g, g.add(g.matmul(x, P(kWv)), P(kBv)), b, t, h, dh);
        Var scores = g.scale(g.matmul(q, g.swap_axes(k, 2, 3)), inv_sqrt_dh);
        if (key_mask) scores = g.add(scores, *key_mask);
        const Var attn = g.matmul(g.softmax(scores, 3), v);
        const Var merged = g.reshape(g.swap_axes(attn, 1, 2), {b, t, d});
        const Var proj = g.add(g.matmul(merged, P(kWo)), P(kBo));
        x = g.layernorm(g.add(x, proj), P(kLn1Gain), P(kLn1Bias), 2);
        const Var hidden = g.gelu(g.add(g.matmul(x, P(kW1)), P(kB1)));
        const Var ffn = g.add(g.matmul(hidden, P(kW2)), P(kB2));
        x = g.layernorm(g.add(x, ffn), P(kLn2Gain), P(kLn2Bias), 2);
    }
    const std::size_t head = 2 + static_cast<std::size_t>(c.n_layers) * kPerLayer;
    const Var picked = g.gather_rows(x, rows);
    return g.add(g.matmul(picked, p.vars[head]), p.vars[head + 1]);
}

Tensor forward_mlm(const ModelParams& params, const TokenSeq& seq) {
    Graph g;
    const BoundParams b = bind_const(g, params);
    return g.value(forward_mlm(g, b, std::span<const TokenSeq>(&seq, 1)));
}

Var mlm_loss(Graph& g, const BoundParams& p, std::span<const TokenSeq> batch) {
    std::vector<int> targets;
    std::vector<double> weights;
    for (const auto& s : batch) {
        if (s.mask_positions.empty()) fail(ErrorKind::InvalidInput, "mlm_loss on sequence without mask positions");
        if (s.target_ids.size() != s.mask_positions.size())
            fail(ErrorKind::InvalidInput, "target count differs from mask count");
        const double w = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(s.mask_positions.size()));
        targets.insert(targets.end(), s.target_ids.begin(), s.target_ids.end());
        weights.insert(weights.end(), s.target_ids.size(), w);
    }
    return g.cross_entropy(forward_mlm(g, p, batch), targets, weights);
}

double mlm_loss(const ModelParams& params, const TokenSeq& seq) {
    Graph g;
    const BoundParams b = bind_const(g, params);
    return g.value(mlm_loss(g, b, std::span<const TokenSeq>(&seq, 1))).item();
}

Var mlm_nll_sum(Graph& g, const BoundParams& p, const TokenSeq& seq) {
    if (seq.mask_positions.empty()) fail(ErrorKind::InvalidInput, "log-likelihood of sequence without mask positions");
    const std::vector<double> ones(seq.target_ids.size(), 1.0);
    return g.cross_entropy(forward_mlm(g, p, std::span<const TokenSeq>(&seq, 1)), seq.target_ids, ones);
}

std::vector<int> argmax_rows(const Tensor& logits, const std::optional<std::vector<int>>& allowed) {
    const std::size_t rows = logits.shape[0], classes = logits.shape[1];
    std::vector<int> candidates;
    if (allowed) {
        if (allowed->empty()) fail(ErrorKind::InvalidInput, "allowed token set is empty");
        candidates = *allowed;
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());
        for (int id : candidates)
            if (id < 0 || static_cast<std::size_t>(id) >= classes) fail(ErrorKind::InvalidInput, "allowed id out of range");
    } else {
        for (std::size_t c = 0; c < classes; ++c) candidates.push_back(static_cast<int>(c));
    }
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* x = logits.data.data() + r * classes;
        int best = candidates.front();
        for (int id : candidates)
            if (x[id] > x[best]) best = id;
        out[r] = best;
    }
    return out;
}

std::vector<int> predict_masked(const ModelParams& params, const TokenSeq& seq,
                                const std::optional<std::vector<int>>& allowed) {
    return argmax_rows(forward_mlm(params, seq), allowed);
}

std::vector<int> predict_numeral_tokens(const Tensor& logits) {
    static const std::vector<int> kSigns{vocab::kPlus, vocab::kMinus};
    static const std::vector<int> kDigits = [] {
        std::vector<int> v;
        for (int dgt = 0; dgt < 10; ++dgt) v.push_back(vocab::digit_id(dgt));
        return v;
    }();
    const std::size_t rows = logits.shape[0], classes = logits.shape[1];
    std::vector<int> out;
    for (std::size_t r = 0; r < rows; ++r) {
        Tensor row({1, classes}, std::vector<double>(logits.data.begin() + static_cast<std::ptrdiff_t>(r * classes),
                                                     logits.data.begin() + static_cast<std::ptrdiff_t>((r + 1) * classes)));
        out.push_back(argmax_rows(row, r == 0 ? kSigns : kDigits)[0]);
    }
    return out;
}

std::vector<std::vector<int>> predict_numeral_tokens(const ModelParams& params, std::span<const TokenSeq> seqs,
                                                     std::size_t batch_size) {
    std::vector<std::vector<int>> out;
    out.reserve(seqs.size());
    for (std::size_t start = 0; start < seqs.size(); start += batch_size) {
        const auto chunk = seqs.subspan(start, std::min(batch_size, seqs.size() - start));
        Graph g;
        const BoundParams b = bind_const(g, params);
        const Tensor& logits = g.value(forward_mlm(g, b, chunk));
        const std::size_t classes = logits.shape[1];
        std::size_t row = 0;
        for (const auto& s : chunk) {
            const std::size_t m = s.mask_positions.size();
            Tensor part({m, classes}, std::vector<double>(logits.data.begin() + static_cast<std::ptrdiff_t>(row * classes),
                                                          logits.data.begin() + static_cast<std::ptrdiff_t>((row + m) * classes)));
            out.push_back(m ? predict_numeral_tokens(part) : std::vector<int>{});
            row += m;
        }
    }
    return out;
}

} // namespace ewclab
