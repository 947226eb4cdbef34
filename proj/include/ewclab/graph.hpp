#pragma once

// Define-by-run reverse-mode autodiff. A Graph is built fresh for each
// forward pass; nodes are appended in evaluation order, so the node list is
// already topologically sorted and backward() walks it once in reverse.

#include <cstdint>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ewclab/tensor.hpp"

namespace ewclab {

struct Var {
    std::uint32_t id = 0;
};

enum class OpKind : std::uint8_t {
    Param,
    Constant,
    MatMul,
    Add,
    Sub,
    Mul,
    Scale,
    Relu,
    Gelu,
    Log,
    Softmax,
    LayerNorm,
    Embedding,
    CrossEntropy,
    Reshape,
    SwapAxes,
    GatherRows,
    Sum,
    Mean,
};

std::string_view to_string(OpKind kind);

class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    // Leaf bound to an external tensor, which must outlive the graph.
    // backward() accumulates into t.grad when t.requires_grad is set.
    Var param(Tensor& t);
    // Non-owning constant; the tensor must outlive the graph.
    Var input(const Tensor& t);
    Var constant(Tensor t);

    const Tensor& value(Var v) const;
    const Shape& shape(Var v) const { return value(v).shape; }
    bool requires_grad(Var v) const;
    OpKind kind(Var v) const;
    std::size_t size() const { return nodes_.size(); }

    // a[..., m, k] x b[k, n] broadcasts b over the leading dims of a;
    // a[..., m, k] x b[..., k, n] with identical leading dims is batched.
    Var matmul(Var a, Var b);
    // Elementwise. Shapes must match, or one shape must be a trailing suffix
    // of the other (broadcast over leading dims).
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var a, double s);
    Var relu(Var x);
    Var gelu(Var x);  // exact erf form
    Var log(Var x);
    Var softmax(Var x, std::size_t axis);
    // gain and bias have shape {shape[axis]}.
    Var layernorm(Var x, Var gain, Var bias, std::size_t axis, double eps = 1e-5);
    // Rows of table [vocab, d] picked by ids; result shape ids_shape + {d}.
    Var embedding(Var table, std::span<const int> ids, const Shape& ids_shape);
    // logits [rows, classes]. Returns sum_r w_r * nll_r with w_r = 1/rows
    // unless row_weights is given.
    Var cross_entropy(Var logits, std::span<const int> targets,
                      std::span<const double> row_weights = {});
    Var reshape(Var x, Shape shape);
    Var swap_axes(Var x, std::size_t i, std::size_t j);
    // Views x as [numel/last, last] and picks rows; result [rows.size(), last].
    Var gather_rows(Var x, std::span<const std::size_t> rows);
    Var sum(Var x);
    Var mean(Var x);

    // Gradients accumulate into bound parameter tensors; intermediate node
    // gradients are reset at the start of every call.
    void backward(Var loss);
    // Gradient of the last backward() w.r.t. any node; empty if unreached.
    const std::vector<double>& grad(Var v) const;

private:
    struct Node {
        OpKind kind;
        Tensor own;
        const Tensor* ext = nullptr;
        Tensor* leaf = nullptr;
        bool needs_grad = false;
        std::vector<double> g;
        std::function<void(Graph&, const Node&)> back;
    };

    const Tensor& val(std::uint32_t id) const;
    // Gradient buffer of an input, or nullptr when it does not need one.
    double* gbuf(std::uint32_t id);
    Var push(OpKind kind, Tensor value, bool needs_grad,
             std::function<void(Graph&, const Node&)> back);
    Var binary(OpKind kind, Var a, Var b);

    std::vector<Node> nodes_;
};

} // namespace ewclab
