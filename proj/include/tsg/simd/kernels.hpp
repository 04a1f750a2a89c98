#pragma once

#include <cstddef>

namespace tsg::simd {

// Instruction-set variants of the numeric kernels. `scalar` is the reference
// implementation every other variant is equivalence-tested against.
enum class Isa { scalar, avx2 };

const char* to_string(Isa isa) noexcept;

// True when the variant was compiled in and the running CPU can execute it.
bool is_available(Isa isa) noexcept;

// Best available variant on this machine.
Isa best_isa() noexcept;

// Variant used by the free functions below. Initialised to best_isa(), or to
// the value of the TSG_SIMD environment variable ("scalar" / "avx2").
Isa active_isa() noexcept;
void set_active_isa(Isa isa);

enum class Trans { no, yes };

using SgemmFn = void (*)(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
                         const float* b, int ldb, float beta, float* c, int ldc);
using DotFn = float (*)(const float* x, const float* y, std::size_t n);
using AxpyFn = void (*)(float alpha, const float* x, float* y, std::size_t n);
using MomentsFn = void (*)(const float* x, std::size_t n, double* sum, double* sum_sq);

struct KernelTable {
    Isa isa;
    SgemmFn sgemm;
    DotFn dot;
    AxpyFn axpy;
    MomentsFn moments;
};

// Throws UsageError when the variant is not available.
const KernelTable& kernels(Isa isa);
const KernelTable& active_kernels() noexcept;

// Row-major C = alpha * op(A) * op(B) + beta * C, with op(A) m x k and op(B) k x n.
// beta == 0 overwrites C without reading it.
inline void sgemm(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
                  const float* b, int ldb, float beta, float* c, int ldc) {
    active_kernels().sgemm(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

inline float dot(const float* x, const float* y, std::size_t n) { return active_kernels().dot(x, y, n); }

// y += alpha * x
inline void axpy(float alpha, const float* x, float* y, std::size_t n) {
    active_kernels().axpy(alpha, x, y, n);
}

// Sum and sum of squares accumulated in double precision.
inline void moments(const float* x, std::size_t n, double* sum, double* sum_sq) {
    active_kernels().moments(x, n, sum, sum_sq);
}

namespace detail {
extern const KernelTable scalar_table;
#if defined(TSG_HAVE_AVX2)
extern const KernelTable avx2_table;
#endif
}  // namespace detail

}  // namespace tsg::simd
