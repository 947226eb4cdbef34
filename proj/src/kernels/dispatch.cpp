#include "ewclab/kernels/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>
#include <vector>

#include "ewclab/error.hpp"

namespace ewclab::kernels {

const Dispatch* avx2_table();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const Dispatch* pick_default() {
    const Dispatch* fast = avx2();
    if (const char* env = std::getenv("EWCLAB_KERNELS")) {
        const std::string want(env);
        if (want == "scalar") return &scalar();
        if (want == "avx2" && fast) return fast;
    }
    return fast ? fast : &scalar();
}

std::atomic<const Dispatch*>& current() {
    static std::atomic<const Dispatch*> table{pick_default()};
    return table;
}

void transpose(std::size_t rows, std::size_t cols, const double* src, std::vector<double>& dst) {
    dst.resize(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

} // namespace

const Dispatch* avx2() {
    static const Dispatch* table = cpu_has_avx2() ? avx2_table() : nullptr;
    return table;
}

const Dispatch& active() { return *current().load(std::memory_order_relaxed); }

void select(Isa isa) {
    if (isa == Isa::Scalar) {
        current().store(&scalar());
        return;
    }
    const Dispatch* fast = avx2();
    if (!fast) fail(ErrorKind::InvalidInput, "avx2 kernels unavailable on this CPU");
    current().store(fast);
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate) {
    if (!accumulate)
        for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
    if (m == 0 || n == 0 || k == 0) return;
    thread_local std::vector<double> at, bt;
    if (trans_a) {
        transpose(k, m, a, at);
        a = at.data();
    }
    if (trans_b) {
        transpose(n, k, b, bt);
        b = bt.data();
    }
    active().gemm_nn(m, n, k, a, k, b, n, c, n);
}

} // namespace ewclab::kernels
