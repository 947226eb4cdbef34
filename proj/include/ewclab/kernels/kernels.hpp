#pragma once

// Dense double-precision inner loops. Every kernel has a portable scalar
// reference implementation; an AVX2/FMA variant is compiled in a separate
// translation unit and picked at runtime when the CPU supports it.
//
// Selection order: EWCLAB_KERNELS=scalar|avx2 if set, else the best
// variant the CPU supports. Results from different variants agree to
// rounding (fused multiply-add and lane-wise partial sums change the
// summation order), so bit-for-bit determinism holds per selected variant.

#include <cstddef>
#include <string_view>

namespace ewclab::kernels {

enum class Isa { Scalar, Avx2 };

struct Dispatch {
    Isa isa;
    std::string_view name;

    // c[m x n] += a[m x k] * b[k x n], all row-major with leading dimensions.
    void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k,
                    const double* a, std::size_t lda,
                    const double* b, std::size_t ldb,
                    double* c, std::size_t ldc);
    double (*dot)(const double* x, const double* y, std::size_t n);
    // y += alpha * x
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    double (*sq_dist)(const double* x, const double* y, std::size_t n);
};

const Dispatch& scalar();

// nullptr when the variant was not compiled in or the CPU lacks the ISA.
const Dispatch* avx2();

const Dispatch& active();

// Overrides the runtime choice. Throws if the ISA is unavailable.
void select(Isa isa);

// c[m x n] (+)= op(a) * op(b) with op = identity or transpose. Operands are
// packed row-major: a is m x k (or k x m when transposed), b is k x n
// (or n x k when transposed).
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

} // namespace ewclab::kernels
