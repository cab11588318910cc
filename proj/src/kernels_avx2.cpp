// AVX2+FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after a CPUID check (see kernels_dispatch.cpp).
#include "gfra/kernels.hpp"

#if defined(__x86_64__) && defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace gfra::kernels {
namespace {

// Two std::complex<double> per __m256d: [re0 im0 re1 im1].
inline __m256d load2(const cplx* p) { return _mm256_loadu_pd(reinterpret_cast<const double*>(p)); }
inline void store2(cplx* p, __m256d v) { _mm256_storeu_pd(reinterpret_cast<double*>(p), v); }

// alpha * v for a broadcast complex alpha.
inline __m256d cmul_bcast(__m256d wr, __m256d wi, __m256d v) {
    const __m256d vs = _mm256_permute_pd(v, 0b0101);
    return _mm256_fmaddsub_pd(wr, v, _mm256_mul_pd(wi, vs));
}

// Elementwise a * b.
inline __m256d cmul(__m256d a, __m256d b) {
    const __m256d ar = _mm256_movedup_pd(a);
    const __m256d ai = _mm256_permute_pd(a, 0b1111);
    const __m256d bs = _mm256_permute_pd(b, 0b0101);
    return _mm256_fmaddsub_pd(ar, b, _mm256_mul_pd(ai, bs));
}

cplx cdotc_avx2(const cplx* a, const cplx* b, std::size_t n) {
    __m256d acc_re = _mm256_setzero_pd();
    __m256d acc_im = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const __m256d va = load2(a + i);
        const __m256d vb = load2(b + i);
        acc_re = _mm256_fmadd_pd(va, vb, acc_re);
        acc_im = _mm256_fmadd_pd(va, _mm256_permute_pd(vb, 0b0101), acc_im);
    }
    alignas(32) double r[4];
    alignas(32) double m[4];
    _mm256_store_pd(r, acc_re);
    _mm256_store_pd(m, acc_im);
    double re = (r[0] + r[1]) + (r[2] + r[3]);
    double im = (m[0] - m[1]) + (m[2] - m[3]);
    for (; i < n; ++i) {
        re += a[i].real() * b[i].real() + a[i].imag() * b[i].imag();
        im += a[i].real() * b[i].imag() - a[i].imag() * b[i].real();
    }
    return {re, im};
}

void caxpy_avx2(cplx alpha, const cplx* x, cplx* y, std::size_t n) {
    const __m256d wr = _mm256_set1_pd(alpha.real());
    const __m256d wi = _mm256_set1_pd(alpha.imag());
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        store2(y + i, _mm256_add_pd(load2(y + i), cmul_bcast(wr, wi, load2(x + i))));
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

double cnorm2_avx2(const cplx* x, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const __m256d v = load2(x + i);
        acc = _mm256_fmadd_pd(v, v, acc);
    }
    alignas(32) double r[4];
    _mm256_store_pd(r, acc);
    double s = (r[0] + r[1]) + (r[2] + r[3]);
    for (; i < n; ++i) s += std::norm(x[i]);
    return s;
}

void cmul_acc_avx2(cplx alpha, const cplx* a, const cplx* b, cplx* y, std::size_t n) {
    const __m256d wr = _mm256_set1_pd(alpha.real());
    const __m256d wi = _mm256_set1_pd(alpha.imag());
    std::size_t i = 0;
    for (; i + 2 <= n; i += 2) {
        const __m256d p = cmul(load2(a + i), load2(b + i));
        store2(y + i, _mm256_add_pd(load2(y + i), cmul_bcast(wr, wi, p)));
    }
    for (; i < n; ++i) y[i] += alpha * (a[i] * b[i]);
}

void quantize_avx2(const double* x, std::size_t n, const double* thresholds,
                   const double* levels, std::size_t num_levels, double* out) {
    const std::size_t nt = num_levels - 1;
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(x + i);
        __m256i idx = _mm256_setzero_si256();
        for (std::size_t t = 0; t < nt; ++t) {
            const __m256d lt = _mm256_cmp_pd(_mm256_set1_pd(thresholds[t]), v, _CMP_LT_OQ);
            idx = _mm256_sub_epi64(idx, _mm256_castpd_si256(lt));
        }
        _mm256_storeu_pd(out + i, _mm256_i64gather_pd(levels, idx, 8));
    }
    for (; i < n; ++i) {
        std::size_t idx = 0;
        for (std::size_t t = 0; t < nt; ++t) idx += thresholds[t] < x[i] ? 1 : 0;
        out[i] = levels[idx];
    }
}

}  // namespace

const KernelTable* avx2_table_impl() {
    static const KernelTable table{"avx2",      cdotc_avx2,    caxpy_avx2,
                                   cnorm2_avx2, cmul_acc_avx2, quantize_avx2};
    return &table;
}

}  // namespace gfra::kernels

#else

namespace gfra::kernels {
const KernelTable* avx2_table_impl() { return nullptr; }
}  // namespace gfra::kernels

#endif
