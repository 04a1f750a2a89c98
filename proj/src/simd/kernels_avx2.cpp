// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached through the
// dispatch table after a runtime CPU check.

#include <immintrin.h>

#include <algorithm>
#include <vector>

#include "tsg/simd/kernels.hpp"

namespace tsg::simd {
namespace {

// Register tile of the GEMM micro-kernel (MR rows x NR columns) and cache blocks.
constexpr int MR = 6;
constexpr int NR = 16;
constexpr int KC = 256;
constexpr int MC = 96;
constexpr int NC = 2048;

struct PackBuffers {
    std::vector<float> a;
    std::vector<float> b;
};

PackBuffers& pack_buffers() {
    thread_local PackBuffers buffers;
    return buffers;
}

// Packs op(A)[i0:i0+mc, p0:p0+kc] * alpha into MR-row panels, column-interleaved.
void pack_a(Trans ta, const float* a, int lda, int i0, int mc, int p0, int kc, float alpha, float* dst) {
    for (int ir = 0; ir < mc; ir += MR) {
        const int mr = std::min(MR, mc - ir);
        for (int p = 0; p < kc; ++p) {
            const int pp = p0 + p;
            for (int r = 0; r < mr; ++r) {
                const int i = i0 + ir + r;
                const float v = ta == Trans::no ? a[static_cast<std::ptrdiff_t>(i) * lda + pp]
                                                : a[static_cast<std::ptrdiff_t>(pp) * lda + i];
                dst[r] = alpha * v;
            }
            for (int r = mr; r < MR; ++r) dst[r] = 0.0f;
            dst += MR;
        }
    }
}

// Packs op(B)[p0:p0+kc, j0:j0+nc] into NR-column panels, zero padded.
void pack_b(Trans tb, const float* b, int ldb, int p0, int kc, int j0, int nc, float* dst) {
    for (int jr = 0; jr < nc; jr += NR) {
        const int nr = std::min(NR, nc - jr);
        for (int p = 0; p < kc; ++p) {
            const int pp = p0 + p;
            if (tb == Trans::no && nr == NR) {
                const float* src = b + static_cast<std::ptrdiff_t>(pp) * ldb + j0 + jr;
                _mm256_storeu_ps(dst, _mm256_loadu_ps(src));
                _mm256_storeu_ps(dst + 8, _mm256_loadu_ps(src + 8));
            } else {
                for (int c = 0; c < nr; ++c) {
                    const int j = j0 + jr + c;
                    dst[c] = tb == Trans::no ? b[static_cast<std::ptrdiff_t>(pp) * ldb + j]
                                             : b[static_cast<std::ptrdiff_t>(j) * ldb + pp];
                }
                for (int c = nr; c < NR; ++c) dst[c] = 0.0f;
            }
            dst += NR;
        }
    }
}

void micro_kernel(int kc, const float* ap, const float* bp, float* c, int ldc, float beta, int mr, int nr) {
    __m256 acc[MR][2];
#pragma GCC unroll 6
    for (int r = 0; r < MR; ++r) {
        acc[r][0] = _mm256_setzero_ps();
        acc[r][1] = _mm256_setzero_ps();
    }
    for (int p = 0; p < kc; ++p) {
        const __m256 b0 = _mm256_loadu_ps(bp);
        const __m256 b1 = _mm256_loadu_ps(bp + 8);
#pragma GCC unroll 6
        for (int r = 0; r < MR; ++r) {
            const __m256 av = _mm256_broadcast_ss(ap + r);
            acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
            acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
        }
        ap += MR;
        bp += NR;
    }

    if (mr == MR && nr == NR) {
        const __m256 vb = _mm256_set1_ps(beta);
#pragma GCC unroll 6
        for (int r = 0; r < MR; ++r) {
            float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
            if (beta == 0.0f) {
                _mm256_storeu_ps(crow, acc[r][0]);
                _mm256_storeu_ps(crow + 8, acc[r][1]);
            } else {
                _mm256_storeu_ps(crow, _mm256_fmadd_ps(vb, _mm256_loadu_ps(crow), acc[r][0]));
                _mm256_storeu_ps(crow + 8, _mm256_fmadd_ps(vb, _mm256_loadu_ps(crow + 8), acc[r][1]));
            }
        }
        return;
    }

    alignas(32) float tile[MR * NR];
    for (int r = 0; r < MR; ++r) {
        _mm256_store_ps(tile + r * NR, acc[r][0]);
        _mm256_store_ps(tile + r * NR + 8, acc[r][1]);
    }
    for (int r = 0; r < mr; ++r) {
        float* crow = c + static_cast<std::ptrdiff_t>(r) * ldc;
        for (int j = 0; j < nr; ++j) {
            crow[j] = beta == 0.0f ? tile[r * NR + j] : beta * crow[j] + tile[r * NR + j];
        }
    }
}

void sgemm_avx2(Trans ta, Trans tb, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
                int ldb, float beta, float* c, int ldc) {
    if (m <= 0 || n <= 0) return;
    if (k <= 0 || alpha == 0.0f) {
        for (int i = 0; i < m; ++i) {
            float* crow = c + static_cast<std::ptrdiff_t>(i) * ldc;
            for (int j = 0; j < n; ++j) crow[j] = beta == 0.0f ? 0.0f : beta * crow[j];
        }
        return;
    }

    PackBuffers& buf = pack_buffers();
    const int nc_max = std::min(NC, n);
    const int kc_max = std::min(KC, k);
    const int mc_max = std::min(MC, m);
    buf.b.resize(static_cast<std::size_t>((nc_max + NR - 1) / NR) * NR * kc_max);
    buf.a.resize(static_cast<std::size_t>((mc_max + MR - 1) / MR) * MR * kc_max);

    for (int jc = 0; jc < n; jc += NC) {
        const int nc = std::min(NC, n - jc);
        for (int pc = 0; pc < k; pc += KC) {
            const int kc = std::min(KC, k - pc);
            const float beta_eff = pc == 0 ? beta : 1.0f;
            pack_b(tb, b, ldb, pc, kc, jc, nc, buf.b.data());
            for (int ic = 0; ic < m; ic += MC) {
                const int mc = std::min(MC, m - ic);
                pack_a(ta, a, lda, ic, mc, pc, kc, alpha, buf.a.data());
                for (int jr = 0; jr < nc; jr += NR) {
                    const int nr = std::min(NR, nc - jr);
                    const float* bp = buf.b.data() + static_cast<std::ptrdiff_t>(jr / NR) * NR * kc;
                    for (int ir = 0; ir < mc; ir += MR) {
                        const int mr = std::min(MR, mc - ir);
                        const float* ap = buf.a.data() + static_cast<std::ptrdiff_t>(ir / MR) * MR * kc;
                        float* cp = c + static_cast<std::ptrdiff_t>(ic + ir) * ldc + jc + jr;
                        micro_kernel(kc, ap, bp, cp, ldc, beta_eff, mr, nr);
                    }
                }
            }
        }
    }
}

float hsum(__m256 v) {
    const __m128 lo = _mm256_castps256_ps128(v);
    const __m128 hi = _mm256_extractf128_ps(v, 1);
    __m128 s = _mm_add_ps(lo, hi);
    s = _mm_hadd_ps(s, s);
    s = _mm_hadd_ps(s, s);
    return _mm_cvtss_f32(s);
}

float dot_avx2(const float* x, const float* y, std::size_t n) {
    __m256 a0 = _mm256_setzero_ps(), a1 = _mm256_setzero_ps(), a2 = _mm256_setzero_ps(),
           a3 = _mm256_setzero_ps();
    std::size_t i = 0;
    for (; i + 32 <= n; i += 32) {
        a0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), a0);
        a1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), a1);
        a2 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 16), _mm256_loadu_ps(y + i + 16), a2);
        a3 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 24), _mm256_loadu_ps(y + i + 24), a3);
    }
    for (; i + 8 <= n; i += 8) a0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), a0);
    float acc = hsum(_mm256_add_ps(_mm256_add_ps(a0, a1), _mm256_add_ps(a2, a3)));
    for (; i < n; ++i) acc += x[i] * y[i];
    return acc;
}

void axpy_avx2(float alpha, const float* x, float* y, std::size_t n) {
    const __m256 va = _mm256_set1_ps(alpha);
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

void moments_avx2(const float* x, std::size_t n, double* sum, double* sum_sq) {
    __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
    __m256d q0 = _mm256_setzero_pd(), q1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        const __m256d v0 = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
        const __m256d v1 = _mm256_cvtps_pd(_mm_loadu_ps(x + i + 4));
        s0 = _mm256_add_pd(s0, v0);
        s1 = _mm256_add_pd(s1, v1);
        q0 = _mm256_fmadd_pd(v0, v0, q0);
        q1 = _mm256_fmadd_pd(v1, v1, q1);
    }
    alignas(32) double ls[4], lq[4];
    _mm256_store_pd(ls, _mm256_add_pd(s0, s1));
    _mm256_store_pd(lq, _mm256_add_pd(q0, q1));
    double s = ls[0] + ls[1] + ls[2] + ls[3];
    double ss = lq[0] + lq[1] + lq[2] + lq[3];
    for (; i < n; ++i) {
        const double v = x[i];
        s += v;
        ss += v * v;
    }
    *sum = s;
    *sum_sq = ss;
}

}  // namespace

namespace detail {
const KernelTable avx2_table{Isa::avx2, sgemm_avx2, dot_avx2, axpy_avx2, moments_avx2};
}

}  // namespace tsg::simd
