#pragma once

// Small post-LayerNorm transformer encoder with a masked-LM head.
//
//   x = tok_emb[ids] + pos_emb[0..T)
//   per layer: x = LN(x + MHA(x)); x = LN(x + W2 gelu(W1 x + b1) + b2)
//   logits = x[mask positions] Wmlm + bmlm
//
// Weights are stored [in, out], so y = x W.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ewclab/graph.hpp"
#include "ewclab/tensor.hpp"
#include "ewclab/vocab.hpp"

namespace ewclab {

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 2;
    int d_model = 64;
    int d_ffn = 128;
    int max_seq = 32;
    int vocab_size = vocab::kSize;
    std::uint64_t seed = 0;

    void validate() const;
    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct TokenSeq {
    std::vector<int> ids;
    std::vector<std::size_t> mask_positions;
    std::vector<int> target_ids;

    void validate(int vocab_size = vocab::kSize) const;
    friend bool operator==(const TokenSeq&, const TokenSeq&) = default;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
    friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

// Parameters in a fixed order: tok_emb, pos_emb, layer blocks, mlm head.
struct ModelParams {
    ModelConfig config;
    std::vector<NamedTensor> entries;

    std::size_t flat_len() const;
    // Flat offset of entries[i].
    std::size_t offset(std::size_t i) const;
    const Tensor& at(std::string_view name) const;
    Tensor& at(std::string_view name);

    std::vector<double> flatten() const;
    void unflatten(std::span<const double> flat);
    std::vector<double> flat_grad() const;  // zeros where no grad yet

    // Half-open flat range covering every parameter of encoder block `layer`.
    std::pair<std::size_t, std::size_t> layer_range(int layer) const;
    // Encoder block owning a flat index, or -1 for embeddings / head.
    int layer_of(std::size_t flat_index) const;

    void set_requires_grad(bool on);
    void zero_grad();

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Closed-form parameter count for a configuration.
std::size_t param_count(const ModelConfig& config);

ModelParams build_model(const ModelConfig& config);

// ModelParams entries bound as graph leaves, in entry order.
struct BoundParams {
    const ModelConfig* config = nullptr;
    std::vector<Var> vars;
};

BoundParams bind(Graph& g, ModelParams& params);        // gradients flow
BoundParams bind_const(Graph& g, const ModelParams& params);  // inference

// Logits [total mask positions across batch, vocab], instances in order.
// Sequences of different length are padded and padding keys are masked.
Var forward_mlm(Graph& g, const BoundParams& p, std::span<const TokenSeq> batch);
Tensor forward_mlm(const ModelParams& params, const TokenSeq& seq);

// Mean over instances of each instance's mean masked-token cross entropy.
Var mlm_loss(Graph& g, const BoundParams& p, std::span<const TokenSeq> batch);
double mlm_loss(const ModelParams& params, const TokenSeq& seq);

// Negative log-likelihood summed over the instance's masked targets.
Var mlm_nll_sum(Graph& g, const BoundParams& p, const TokenSeq& seq);

// Argmax per mask position, optionally over a subset; ties go to the lowest id.
std::vector<int> predict_masked(const ModelParams& params, const TokenSeq& seq,
                                const std::optional<std::vector<int>>& allowed = std::nullopt);
std::vector<int> argmax_rows(const Tensor& logits, const std::optional<std::vector<int>>& allowed);

// Numeral prediction: first mask slot restricted to {+,-}, the rest to digits.
std::vector<int> predict_numeral_tokens(const Tensor& logits_for_one_instance);
std::vector<std::vector<int>> predict_numeral_tokens(const ModelParams& params,
                                                     std::span<const TokenSeq> seqs,
                                                     std::size_t batch_size = 64);

} // namespace ewclab
