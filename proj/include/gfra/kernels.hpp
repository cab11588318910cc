#pragma once
// Data-parallel inner loops shared by the modem, channel, receiver and
// front-end. Every kernel has a scalar reference implementation and, on x86-64,
// an AVX2+FMA variant chosen once at start-up from CPUID. Set the environment
// variable GFRA_KERNELS=scalar to force the reference path.

#include <cstddef>
#include <span>
#include <string_view>

#include "gfra/types.hpp"

namespace gfra::kernels {

struct KernelTable {
    std::string_view name;

    // sum_i conj(a[i]) * b[i]
    cplx (*cdotc)(const cplx* a, const cplx* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*caxpy)(cplx alpha, const cplx* x, cplx* y, std::size_t n);
    // sum_i |x[i]|^2
    double (*cnorm2)(const cplx* x, std::size_t n);
    // y[i] += alpha * a[i] * b[i]
    void (*cmul_acc)(cplx alpha, const cplx* a, const cplx* b, cplx* y, std::size_t n);
    // out[i] = levels[#{ t in thresholds : t < x[i] }]; thresholds ascending.
    void (*quantize)(const double* x, std::size_t n, const double* thresholds,
                     const double* levels, std::size_t num_levels, double* out);
};

const KernelTable& scalar_table();
/// nullptr when the build target or the running CPU lacks AVX2/FMA.
const KernelTable* avx2_table();
/// The table used by the library, selected on first call.
const KernelTable& active();

inline cplx cdotc(std::span<const cplx> a, std::span<const cplx> b) {
    return active().cdotc(a.data(), b.data(), a.size());
}
inline void caxpy(cplx alpha, std::span<const cplx> x, std::span<cplx> y) {
    active().caxpy(alpha, x.data(), y.data(), x.size());
}
inline double cnorm2(std::span<const cplx> x) { return active().cnorm2(x.data(), x.size()); }
inline void cmul_acc(cplx alpha, std::span<const cplx> a, std::span<const cplx> b,
                     std::span<cplx> y) {
    active().cmul_acc(alpha, a.data(), b.data(), y.data(), a.size());
}

}  // namespace gfra::kernels
