#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ewclab {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float64 array. A scalar is shape {1}.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    // Empty until a backward pass reaches this tensor; then data.size() long.
    std::vector<double> grad;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d, bool requires_grad = false);

    std::size_t size() const { return data.size(); }
    bool has_grad() const { return !grad.empty(); }
    void zero_grad() { grad.clear(); }
    double item() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

Tensor zeros(const Shape& shape);
Tensor ones(const Shape& shape);
Tensor full(const Shape& shape, double value);
// Deterministic N(0, stddev^2) samples: same (shape, seed, stddev) gives the same bits.
Tensor randn(const Shape& shape, std::uint64_t seed, double stddev = 1.0);

} // namespace ewclab
