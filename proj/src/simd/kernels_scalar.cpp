// Reference kernels. Plain loops, no intrinsics; the SIMD variants must agree
// with these up to floating-point reassociation.

#include "tsg/simd/kernels.hpp"

namespace tsg::simd {
namespace {

void sgemm_scalar(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda,
                  const float* b, int ldb, float beta, float* c, int ldc) {
    for (int i = 0; i < m; ++i) {
        float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
        if (beta == 0.0f) {
            for (int j = 0; j < n; ++j) crow[j] = 0.0f;
        } else if (beta != 1.0f) {
            for (int j = 0; j < n; ++j) crow[j] *= beta;
        }
        for (int p = 0; p < k; ++p) {
            const float av = alpha * (ta == Trans::no ? a[static_cast<std::ptrdiff_t>(i) * lda + p]
                                                      : a[static_cast<std::ptrdiff_t>(p) * lda + i]);
            if (tb == Trans::no) {
                const float* brow = b + static_cast<std::ptrdiff_t>(p) * ldb;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (int j = 0; j < n; ++j) crow[j] += av * b[static_cast<std::ptrdiff_t>(j) * ldb + p];
            }
        }
    }
}

float dot_scalar(const float* x, const float* y, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += static_cast<double>(x[i]) * y[i];
    return static_cast<float>(acc);
}

void axpy_scalar(float alpha, const float* x, float* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void moments_scalar(const float* x, std::size_t n, double* sum, double* sum_sq) {
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double v = x[i];
        s += v;
        ss += v * v;
    }
    *sum = s;
    *sum_sq = ss;
}

}  // namespace

namespace detail {
const KernelTable scalar_table{Isa::scalar, sgemm_scalar, dot_scalar, axpy_scalar, moments_scalar};
}

}  // namespace tsg::simd
