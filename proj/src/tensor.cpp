#include "ewclab/tensor.hpp"

#include <random>
#include <sstream>

#include "ewclab/error.hpp"

namespace ewclab {
namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) fail(ErrorKind::InvalidShape, "empty shape");
    for (auto d : shape)
        if (d == 0) fail(ErrorKind::InvalidShape, "zero dimension in shape " + shape_str(shape));
}

} // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d, bool rg)
    : shape(std::move(s)), data(std::move(d)), requires_grad(rg) {
    if (shape.empty()) fail(ErrorKind::InvalidShape, "empty shape");
    if (numel(shape) != data.size())
        fail(ErrorKind::InvalidShape, "shape " + shape_str(shape) + " does not match " +
                                          std::to_string(data.size()) + " values");
}

double Tensor::item() const {
    if (data.size() != 1) fail(ErrorKind::InvalidShape, "item() on tensor of shape " + shape_str(shape));
    return data[0];
}

Tensor zeros(const Shape& shape) { return full(shape, 0.0); }

Tensor ones(const Shape& shape) { return full(shape, 1.0); }

Tensor full(const Shape& shape, double value) {
    check_shape(shape);
    return Tensor(shape, std::vector<double>(numel(shape), value));
}

Tensor randn(const Shape& shape, std::uint64_t seed, double stddev) {
    check_shape(shape);
    if (!(stddev > 0.0)) fail(ErrorKind::InvalidInput, "randn stddev must be positive");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, stddev);
    std::vector<double> v(numel(shape));
    for (auto& x : v) x = normal(rng);
    return Tensor(shape, std::move(v));
}

} // namespace ewclab
