#include "ewclab/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "ewclab/error.hpp"
#include "ewclab/kernels/kernels.hpp"

namespace ewclab {
namespace {

bool is_suffix(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// outer x n x inner decomposition around one axis.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
    if (axis >= shape.size())
        fail(ErrorKind::InvalidShape, "axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
    AxisSplit s;
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    s.n = shape[axis];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

} // namespace

std::string_view to_string(OpKind kind) {
    switch (kind) {
    case OpKind::Param: return "param";
    case OpKind::Constant: return "constant";
    case OpKind::MatMul: return "matmul";
    case OpKind::Add: return "add";
    case OpKind::Sub: return "sub";
    case OpKind::Mul: return "mul";
    case OpKind::Scale: return "scale";
    case OpKind::Relu: return "relu";
    case OpKind::Gelu: return "gelu";
    case OpKind::Log: return "log";
    case OpKind::Softmax: return "softmax";
    case OpKind::LayerNorm: return "layernorm";
    case OpKind::Embedding: return "embedding";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Reshape: return "reshape";
    case OpKind::SwapAxes: return "swap_axes";
    case OpKind::GatherRows: return "gather_rows";
    case OpKind::Sum: return "sum";
    case OpKind::Mean: return "mean";
    }
    return "?";
}

Var Graph::param(Tensor& t) {
    Node n{OpKind::Param, {}, &t, &t, t.requires_grad, {}, {}};
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::input(const Tensor& t) {
    Node n{OpKind::Constant, {}, &t, nullptr, false, {}, {}};
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::constant(Tensor t) {
    t.requires_grad = false;
    return push(OpKind::Constant, std::move(t), false, {});
}

const Tensor& Graph::val(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.ext ? *n.ext : n.own;
}

const Tensor& Graph::value(Var v) const {
    if (v.id >= nodes_.size()) fail(ErrorKind::InvalidInput, "unknown graph node");
    return val(v.id);
}

bool Graph::requires_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

OpKind Graph::kind(Var v) const { return nodes_.at(v.id).kind; }

double* Graph::gbuf(std::uint32_t id) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return nullptr;
    if (n.g.empty()) n.g.assign(val(id).size(), 0.0);
    return n.g.data();
}

Var Graph::push(OpKind kind, Tensor value, bool needs_grad,
                std::function<void(Graph&, const Node&)> back) {
    Node n{kind, std::move(value), nullptr, nullptr, needs_grad, {}, {}};
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::matmul(Var av, Var bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    if (a.shape.size() < 2 || b.shape.size() < 2)
        fail(ErrorKind::InvalidShape, "matmul needs rank >= 2, got " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const std::size_t k = a.shape.back();
    if (b.shape[b.shape.size() - 2] != k)
        fail(ErrorKind::InvalidShape, "matmul inner dims differ: " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const std::size_t n = b.shape.back();
    const bool needs = requires_grad(av) || requires_grad(bv);
    const std::uint32_t ia = av.id, ib = bv.id;

    if (b.shape.size() == 2) {
        const std::size_t m = a.size() / k;
        Shape out = a.shape;
        out.back() = n;
        std::vector<double> c(m * n);
        kernels::gemm(false, false, m, n, k, a.data.data(), b.data.data(), c.data(), false);
        return push(OpKind::MatMul, Tensor(std::move(out), std::move(c)), needs,
                    [ia, ib, m, n, k](Graph& g, const Node& self) {
                        const double* dc = self.g.data();
                        if (double* da = g.gbuf(ia))
                            kernels::gemm(false, true, m, k, n, dc, g.val(ib).data.data(), da, true);
                        if (double* db = g.gbuf(ib))
                            kernels::gemm(true, false, k, n, m, g.val(ia).data.data(), dc, db, true);
                    });
    }

    if (a.shape.size() != b.shape.size() ||
        !std::equal(a.shape.begin(), a.shape.end() - 2, b.shape.begin()))
        fail(ErrorKind::InvalidShape, "batched matmul leading dims differ: " + shape_str(a.shape) + " x " + shape_str(b.shape));
    const std::size_t m = a.shape[a.shape.size() - 2];
    const std::size_t batch = a.size() / (m * k);
    Shape out = a.shape;
    out.back() = n;
    std::vector<double> c(batch * m * n);
    for (std::size_t t = 0; t < batch; ++t)
        kernels::gemm(false, false, m, n, k, a.data.data() + t * m * k, b.data.data() + t * k * n,
                      c.data() + t * m * n, false);
    return push(OpKind::MatMul, Tensor(std::move(out), std::move(c)), needs,
                [ia, ib, m, n, k, batch](Graph& g, const Node& self) {
                    double* da = g.gbuf(ia);
                    double* db = g.gbuf(ib);
                    const double* A = g.val(ia).data.data();
                    const double* B = g.val(ib).data.data();
                    for (std::size_t t = 0; t < batch; ++t) {
                        const double* dc = self.g.data() + t * m * n;
                        if (da) kernels::gemm(false, true, m, k, n, dc, B + t * k * n, da + t * m * k, true);
                        if (db) kernels::gemm(true, false, k, n, m, A + t * m * k, dc, db + t * k * n, true);
                    }
                });
}

namespace {

// out[r*ns + j] = big[r*ns + j] (op) small[j], with the operand order restored
// by `small_first`.
template <class F>
void broadcast_apply(const double* big, const double* small, double* out, std::size_t reps, std::size_t ns,
                     bool small_first, F op) {
    for (std::size_t r = 0; r < reps; ++r) {
        const double* x = big + r * ns;
        double* o = out + r * ns;
        if (small_first)
            for (std::size_t j = 0; j < ns; ++j) o[j] = op(small[j], x[j]);
        else
            for (std::size_t j = 0; j < ns; ++j) o[j] = op(x[j], small[j]);
    }
}

} // namespace

Var Graph::binary(OpKind kind, Var av, Var bv) {
    const Tensor& a = value(av);
    const Tensor& b = value(bv);
    bool a_big;
    if (a.shape == b.shape || is_suffix(b.shape, a.shape)) a_big = true;
    else if (is_suffix(a.shape, b.shape)) a_big = false;
    else
        fail(ErrorKind::InvalidShape, std::string(to_string(kind)) + " shape mismatch: " +
                                          shape_str(a.shape) + " vs " + shape_str(b.shape));
    const Tensor& big = a_big ? a : b;
    const Tensor& small = a_big ? b : a;
    const std::size_t ns = small.size();
    const std::size_t reps = ns ? big.size() / ns : 0;
    std::vector<double> out(big.size());
    const bool small_first = !a_big;
    switch (kind) {
    case OpKind::Add:
        broadcast_apply(big.data.data(), small.data.data(), out.data(), reps, ns, small_first,
                        [](double x, double y) { return x + y; });
        break;
    case OpKind::Sub:
        broadcast_apply(big.data.data(), small.data.data(), out.data(), reps, ns, small_first,
                        [](double x, double y) { return x - y; });
        break;
    default:
        broadcast_apply(big.data.data(), small.data.data(), out.data(), reps, ns, small_first,
                        [](double x, double y) { return x * y; });
        break;
    }
    const bool needs = requires_grad(av) || requires_grad(bv);
    const std::uint32_t ibig = a_big ? av.id : bv.id;
    const std::uint32_t ismall = a_big ? bv.id : av.id;
    // Sign applied to the gradient of the second operand of a subtraction.
    const double big_sign = (kind == OpKind::Sub && !a_big) ? -1.0 : 1.0;
    const double small_sign = (kind == OpKind::Sub && a_big) ? -1.0 : 1.0;
    return push(kind, Tensor(big.shape, std::move(out)), needs,
                [kind, ibig, ismall, reps, ns, big_sign, small_sign](Graph& g, const Node& self) {
                    const double* dc = self.g.data();
                    const bool mul = kind == OpKind::Mul;
                    if (double* db = g.gbuf(ibig)) {
                        const double* sv = g.val(ismall).data.data();
                        for (std::size_t r = 0; r < reps; ++r) {
                            const double* d = dc + r * ns;
                            double* o = db + r * ns;
                            if (mul)
                                for (std::size_t j = 0; j < ns; ++j) o[j] += d[j] * sv[j];
                            else
                                for (std::size_t j = 0; j < ns; ++j) o[j] += big_sign * d[j];
                        }
                    }
                    if (double* ds = g.gbuf(ismall)) {
                        const double* bvv = g.val(ibig).data.data();
                        for (std::size_t r = 0; r < reps; ++r) {
                            const double* d = dc + r * ns;
                            const double* x = bvv + r * ns;
                            if (mul)
                                for (std::size_t j = 0; j < ns; ++j) ds[j] += d[j] * x[j];
                            else
                                for (std::size_t j = 0; j < ns; ++j) ds[j] += small_sign * d[j];
                        }
                    }
                });
}

Var Graph::add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var Graph::sub(Var a, Var b) { return binary(OpKind::Sub, a, b); }
Var Graph::mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }

Var Graph::scale(Var av, double s) {
    const Tensor& a = value(av);
    std::vector<double> out(a.data);
    for (auto& x : out) x *= s;
    const std::uint32_t ia = av.id;
    return push(OpKind::Scale, Tensor(a.shape, std::move(out)), requires_grad(av),
                [ia, s](Graph& g, const Node& self) {
                    double* da = g.gbuf(ia);
                    for (std::size_t i = 0; i < self.g.size(); ++i) da[i] += s * self.g[i];
                });
}

Var Graph::relu(Var xv) {
    const Tensor& x = value(xv);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data[i] > 0.0 ? x.data[i] : 0.0;
    const std::uint32_t ix = xv.id;
    return push(OpKind::Relu, Tensor(x.shape, std::move(out)), requires_grad(xv),
                [ix](Graph& g, const Node& self) {
                    double* dx = g.gbuf(ix);
                    const auto& xd = g.val(ix).data;
                    for (std::size_t i = 0; i < self.g.size(); ++i)
                        if (xd[i] > 0.0) dx[i] += self.g[i];
                });
}

Var Graph::gelu(Var xv) {
    const Tensor& x = value(xv);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = 0.5 * x.data[i] * (1.0 + std::erf(x.data[i] * std::numbers::sqrt2 / 2.0));
    const std::uint32_t ix = xv.id;
    return push(OpKind::Gelu, Tensor(x.shape, std::move(out)), requires_grad(xv),
                [ix](Graph& g, const Node& self) {
                    double* dx = g.gbuf(ix);
                    const auto& xd = g.val(ix).data;
                    const double inv_sqrt_2pi = std::numbers::inv_sqrtpi / std::numbers::sqrt2;
                    for (std::size_t i = 0; i < self.g.size(); ++i) {
                        const double v = xd[i];
                        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                        dx[i] += self.g[i] * (cdf + v * pdf);
                    }
                });
}

Var Graph::log(Var xv) {
    const Tensor& x = value(xv);
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(x.data[i] > 0.0)) fail(ErrorKind::InvalidInput, "log of non-positive value");
        out[i] = std::log(x.data[i]);
    }
    const std::uint32_t ix = xv.id;
    return push(OpKind::Log, Tensor(x.shape, std::move(out)), requires_grad(xv),
                [ix](Graph& g, const Node& self) {
                    double* dx = g.gbuf(ix);
                    const auto& xd = g.val(ix).data;
                    for (std::size_t i = 0; i < self.g.size(); ++i) dx[i] += self.g[i] / xd[i];
                });
}

Var Graph::softmax(Var xv, std::size_t axis) {
    const Tensor& x = value(xv);
    const AxisSplit s = split_axis(x.shape, axis);
    std::vector<double> y(x.size());
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.n * s.inner + in;
            double mx = x.data[base];
            for (std::size_t j = 1; j < s.n; ++j) mx = std::max(mx, x.data[base + j * s.inner]);
            double z = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) {
                const double e = std::exp(x.data[base + j * s.inner] - mx);
                y[base + j * s.inner] = e;
                z += e;
            }
            for (std::size_t j = 0; j < s.n; ++j) y[base + j * s.inner] /= z;
        }
    const std::uint32_t ix = xv.id;
    return push(OpKind::Softmax, Tensor(x.shape, std::move(y)), requires_grad(xv),
                [ix, s](Graph& g, const Node& self) {
                    double* dx = g.gbuf(ix);
                    const auto& yd = self.own.data;
                    const auto& dy = self.g;
                    for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.n * s.inner + in;
                            double dot = 0.0;
                            for (std::size_t j = 0; j < s.n; ++j)
                                dot += dy[base + j * s.inner] * yd[base + j * s.inner];
                            for (std::size_t j = 0; j < s.n; ++j) {
                                const std::size_t p = base + j * s.inner;
                                dx[p] += yd[p] * (dy[p] - dot);
                            }
                        }
                });
}

Var Graph::layernorm(Var xv, Var gv, Var bv, std::size_t axis, double eps) {
    const Tensor& x = value(xv);
    const AxisSplit s = split_axis(x.shape, axis);
    if (!(eps > 0.0)) fail(ErrorKind::InvalidInput, "layernorm eps must be positive");
    if (value(gv).shape != Shape{s.n} || value(bv).shape != Shape{s.n})
        fail(ErrorKind::InvalidShape, "layernorm gain/bias must have shape [" + std::to_string(s.n) + "]");
    const auto& gain = value(gv).data;
    const auto& bias = value(bv).data;
    std::vector<double> y(x.size()), xhat(x.size()), rstd(s.outer * s.inner);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.n * s.inner + in;
            double mu = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) mu += x.data[base + j * s.inner];
            mu /= static_cast<double>(s.n);
            double var = 0.0;
            for (std::size_t j = 0; j < s.n; ++j) {
                const double d = x.data[base + j * s.inner] - mu;
                var += d * d;
            }
            var /= static_cast<double>(s.n);
            const double r = 1.0 / std::sqrt(var + eps);
            rstd[o * s.inner + in] = r;
            for (std::size_t j = 0; j < s.n; ++j) {
                const std::size_t p = base + j * s.inner;
                xhat[p] = (x.data[p] - mu) * r;
                y[p] = xhat[p] * gain[j] + bias[j];
            }
        }
    const bool needs = requires_grad(xv) || requires_grad(gv) || requires_grad(bv);
    const std::uint32_t ix = xv.id, ig = gv.id, ibias = bv.id;
    return push(OpKind::LayerNorm, Tensor(x.shape, std::move(y)), needs,
                [ix, ig, ibias, s, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, const Node& self) {
                    const auto& dy = self.g;
                    const auto& gain = g.val(ig).data;
                    double* dx = g.gbuf(ix);
                    double* dg = g.gbuf(ig);
                    double* db = g.gbuf(ibias);
                    const double inv_n = 1.0 / static_cast<double>(s.n);
                    for (std::size_t o = 0; o < s.outer; ++o)
                        for (std::size_t in = 0; in < s.inner; ++in) {
                            const std::size_t base = o * s.n * s.inner + in;
                            double m1 = 0.0, m2 = 0.0;
                            for (std::size_t j = 0; j < s.n; ++j) {
                                const std::size_t p = base + j * s.inner;
                                const double dxh = dy[p] * gain[j];
                                m1 += dxh;
                                m2 += dxh * xhat[p];
                                if (dg) dg[j] += dy[p] * xhat[p];
                                if (db) db[j] += dy[p];
                            }
                            if (!dx) continue;
                            m1 *= inv_n;
                            m2 *= inv_n;
                            const double r = rstd[o * s.inner + in];
                            for (std::size_t j = 0; j < s.n; ++j) {
                                const std::size_t p = base + j * s.inner;
                                dx[p] += r * (dy[p] * gain[j] - m1 - xhat[p] * m2);
                            }
                        }
                });
}

Var Graph::embedding(Var tv, std::span<const int> ids, const Shape& ids_shape) {
    const Tensor& table = value(tv);
    if (table.shape.size() != 2) fail(ErrorKind::InvalidShape, "embedding table must be rank 2");
    if (numel(ids_shape) != ids.size())
        fail(ErrorKind::InvalidShape, "ids do not match shape " + shape_str(ids_shape));
    const std::size_t vocab = table.shape[0], d = table.shape[1];
    std::vector<double> out(ids.size() * d);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= vocab)
            fail(ErrorKind::InvalidInput, "token id " + std::to_string(ids[r]) + " outside table of " +
                                              std::to_string(vocab) + " rows");
        std::copy_n(table.data.begin() + ids[r] * d, d, out.begin() + r * d);
    }
    Shape shape = ids_shape;
    shape.push_back(d);
    const std::uint32_t it = tv.id;
    return push(OpKind::Embedding, Tensor(std::move(shape), std::move(out)), requires_grad(tv),
                [it, d, ids = std::vector<int>(ids.begin(), ids.end())](Graph& g, const Node& self) {
                    double* dt = g.gbuf(it);
                    for (std::size_t r = 0; r < ids.size(); ++r)
                        for (std::size_t c = 0; c < d; ++c) dt[ids[r] * d + c] += self.g[r * d + c];
                });
}

Var Graph::cross_entropy(Var lv, std::span<const int> targets, std::span<const double> row_weights) {
    const Tensor& logits = value(lv);
    if (logits.shape.size() != 2) fail(ErrorKind::InvalidShape, "cross_entropy logits must be rank 2");
    const std::size_t rows = logits.shape[0], classes = logits.shape[1];
    if (targets.size() != rows)
        fail(ErrorKind::InvalidShape, "cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                                          std::to_string(rows) + " rows");
    if (rows == 0) fail(ErrorKind::InvalidInput, "cross_entropy over zero rows");
    if (!row_weights.empty() && row_weights.size() != rows)
        fail(ErrorKind::InvalidShape, "cross_entropy: row weight count mismatch");
    std::vector<double> w(rows, 1.0 / static_cast<double>(rows));
    if (!row_weights.empty()) w.assign(row_weights.begin(), row_weights.end());
    std::vector<double> prob(rows * classes);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= classes)
            fail(ErrorKind::InvalidInput, "target id " + std::to_string(t) + " outside " +
                                              std::to_string(classes) + " classes");
        const double* x = logits.data.data() + r * classes;
        const double mx = *std::max_element(x, x + classes);
        double z = 0.0;
        for (std::size_t c = 0; c < classes; ++c) z += std::exp(x[c] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t c = 0; c < classes; ++c) prob[r * classes + c] = std::exp(x[c] - lse);
        loss += w[r] * (lse - x[t]);
    }
    const std::uint32_t il = lv.id;
    return push(OpKind::CrossEntropy, Tensor({1}, {loss}), requires_grad(lv),
                [il, rows, classes, prob = std::move(prob), w = std::move(w),
                 tg = std::vector<int>(targets.begin(), targets.end())](Graph& g, const Node& self) {
                    double* dl = g.gbuf(il);
                    const double up = self.g[0];
                    for (std::size_t r = 0; r < rows; ++r) {
                        const double s = up * w[r];
                        for (std::size_t c = 0; c < classes; ++c) dl[r * classes + c] += s * prob[r * classes + c];
                        dl[r * classes + tg[r]] -= s;
                    }
                });
}

Var Graph::reshape(Var xv, Shape shape) {
    const Tensor& x = value(xv);
    if (shape.empty() || numel(shape) != x.size())
        fail(ErrorKind::InvalidShape, "cannot reshape " + shape_str(x.shape) + " to " + shape_str(shape));
    const std::uint32_t ix = xv.id;
    return push(OpKind::Reshape, Tensor(std::move(shape), x.data), requires_grad(xv),
                [ix](Graph& g, const Node& self) {
                    double* dx = g.gbuf(ix);
                    for (std::size_t i = 0; i < self.g.size(); ++i) dx[i] += self.g[i];
                });
}

Var Graph::swap_axes(Var xv, std::size_t i, std::size_t j) {
    const Tensor& x = value(xv);
    const std::size_t rank = x.shape.size();
    if (i >= rank || j >= rank) fail(ErrorKind::InvalidShape, "swap_axes out of range for " + shape_str(x.shape));
    if (i > j) std::swap(i, j);
    Shape out_shape = x.shape;
    std::swap(out_shape[i], out_shape[j]);
    // x viewed as [A, ni, B, nj, C] -> [A, nj, B, ni, C]
    std::size_t A = 1, B = 1, C = 1;
    for (std::size_t k = 0; k < i; ++k) A *= x.shape[k];
    for (std::size_t k = i + 1; k < j; ++k) B *= x.shape[k];
    for (std::size_t k = j + 1; k < rank; ++k) C *= x.shape[k];
    const std::size_t ni = x.shape[i], nj = x.shape[j];
    auto src_index = [=](std::size_t a, std::size_t p, std::size_t b, std::size_t q) {
        // p indexes axis i, q indexes axis j in the source layout
        return (((a * ni + p) * B + b) * nj + q) * C;
    };
    auto dst_index = [=](std::size_t a, std::size_t p, std::size_t b, std::size_t q) {
        return (((a * nj + q) * B + b) * ni + p) * C;
    };
    std::vector<double> out(x.size());
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t p = 0; p < ni; ++p)
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t q = 0; q < nj; ++q)
                    std::copy_n(x.data.begin() + src_index(a, p, b, q), C, out.begin() + dst_index(a, p, b, q));
    const std::uint32_t ix = xv.id;
    return push(OpKind::SwapAxes, Tensor(std::move(out_shape), std::move(out)), requires_grad(xv),
                [ix, A, B, C, ni, nj, src_index, dst_index](Graph& g, const Node& self) {
                    double* dx = g.gbuf(ix);
                    for (std::size_t a = 0; a < A; ++a)
                        for (std::size_t p = 0; p < ni; ++p)
                            for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t q = 0; q < nj; ++q) {
                                    const std::size_t s = src_index(a, p, b, q), d = dst_index(a, p, b, q);
                                    for (std::size_t c = 0; c < C; ++c) dx[s + c] += self.g[d + c];
                                }
                });
}

Var Graph::gather_rows(Var xv, std::span<const std::size_t> rows) {
    const Tensor& x = value(xv);
    const std::size_t d = x.shape.back();
    const std::size_t n_rows = x.size() / d;
    std::vector<double> out(rows.size() * d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r] >= n_rows) fail(ErrorKind::InvalidInput, "gather_rows index out of range");
        std::copy_n(x.data.begin() + rows[r] * d, d, out.begin() + r * d);
    }
    const std::uint32_t ix = xv.id;
    return push(OpKind::GatherRows, Tensor({rows.size(), d}, std::move(out)), requires_grad(xv),
                [ix, d, rows = std::vector<std::size_t>(rows.begin(), rows.end())](Graph& g, const Node& self) {
                    double* dx = g.gbuf(ix);
                    for (std::size_t r = 0; r < rows.size(); ++r)
                        for (std::size_t c = 0; c < d; ++c) dx[rows[r] * d + c] += self.g[r * d + c];
                });
}

Var Graph::sum(Var xv) {
    const Tensor& x = value(xv);
    double s = 0.0;
    for (double v : x.data) s += v;
    const std::uint32_t ix = xv.id;
    return push(OpKind::Sum, Tensor({1}, {s}), requires_grad(xv), [ix](Graph& g, const Node& self) {
        double* dx = g.gbuf(ix);
        const std::size_t n = g.val(ix).size();
        for (std::size_t i = 0; i < n; ++i) dx[i] += self.g[0];
    });
}

Var Graph::mean(Var xv) {
    const Tensor& x = value(xv);
    if (x.size() == 0) fail(ErrorKind::InvalidInput, "mean of empty tensor");
    double s = 0.0;
    for (double v : x.data) s += v;
    const double inv = 1.0 / static_cast<double>(x.size());
    const std::uint32_t ix = xv.id;
    return push(OpKind::Mean, Tensor({1}, {s * inv}), requires_grad(xv), [ix, inv](Graph& g, const Node& self) {
        double* dx = g.gbuf(ix);
        const std::size_t n = g.val(ix).size();
        for (std::size_t i = 0; i < n; ++i) dx[i] += self.g[0] * inv;
    });
}

void Graph::backward(Var loss) {
    const Tensor& l = value(loss);
    if (l.size() != 1) fail(ErrorKind::InvalidInput, "backward needs a scalar loss, got " + shape_str(l.shape));
    for (auto& n : nodes_) n.g.clear();
    if (!nodes_[loss.id].needs_grad) return;
    nodes_[loss.id].g.assign(1, 1.0);
    for (std::size_t id = loss.id + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (!n.needs_grad || n.g.empty()) continue;
        if (n.leaf) {
            Tensor& t = *n.leaf;
            if (t.grad.empty()) t.grad.assign(t.size(), 0.0);
            for (std::size_t i = 0; i < n.g.size(); ++i) t.grad[i] += n.g[i];
        } else if (n.back) {
            n.back(*this, n);
        }
    }
}

const std::vector<double>& Graph::grad(Var v) const { return nodes_.at(v.id).g; }

} // namespace ewclab
