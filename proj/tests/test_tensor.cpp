#include "doctest.h"

#include <cmath>
#include <numeric>

#include "ewclab/error.hpp"
#include "ewclab/tensor.hpp"

using namespace ewclab;

TEST_CASE("zeros and full fill every element") {
    const Tensor z = zeros({2, 2});
    CHECK(z.shape == Shape{2, 2});
    CHECK(z.data == std::vector<double>{0, 0, 0, 0});
    CHECK(full({3}, 2.5).data == std::vector<double>{2.5, 2.5, 2.5});
    CHECK(ones({1}).item() == 1.0);
}

TEST_CASE("randn is a pure function of shape, seed and stddev") {
    CHECK(randn({4}, 7) == randn({4}, 7));
    CHECK_FALSE(randn({4}, 7) == randn({4}, 8));
    const Tensor t = randn({100000}, 1, 1.0);
    const double mean = std::accumulate(t.data.begin(), t.data.end(), 0.0) / 100000.0;
    CHECK(std::fabs(mean) < 0.02);
    const Tensor s = randn({50000}, 3, 0.5);
    double var = 0.0;
    for (double v : s.data) var += v * v;
    CHECK(std::sqrt(var / 50000.0) == doctest::Approx(0.5).epsilon(0.02));
}

TEST_CASE("degenerate shapes are rejected") {
    auto kind_of = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::Io;  // sentinel: nothing thrown
    };
    CHECK(kind_of([] { zeros({}); }) == ErrorKind::InvalidShape);
    CHECK(kind_of([] { zeros({2, 0}); }) == ErrorKind::InvalidShape);
    CHECK(kind_of([] { randn({0}, 1); }) == ErrorKind::InvalidShape);
    CHECK(kind_of([] { Tensor({2, 2}, {1, 2, 3}); }) == ErrorKind::InvalidShape);
    CHECK(kind_of([] { randn({2}, 1, 0.0); }) == ErrorKind::InvalidInput);
    CHECK(kind_of([] { Tensor({2}, {1, 2}).item(); }) == ErrorKind::InvalidShape);
}

TEST_CASE("numel and shape_str") {
    CHECK(numel({2, 3, 4}) == 24);
    CHECK(shape_str({2, 3}) == "[2,3]");
}
