#include "gfra/kernels.hpp"

namespace gfra::kernels {
namespace {

cplx cdotc_scalar(const cplx* a, const cplx* b, std::size_t n) {
    double re = 0.0, im = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double ar = a[i].real(), ai = a[i].imag();
        const double br = b[i].real(), bi = b[i].imag();
        re += ar * br + ai * bi;
        im += ar * bi - ai * br;
    }
    return {re, im};
}

void caxpy_scalar(cplx alpha, const cplx* x, cplx* y, std::size_t n) {
    const double wr = alpha.real(), wi = alpha.imag();
    for (std::size_t i = 0; i < n; ++i) {
        const double xr = x[i].real(), xi = x[i].imag();
        y[i] = {y[i].real() + wr * xr - wi * xi, y[i].imag() + wr * xi + wi * xr};
    }
}

double cnorm2_scalar(const cplx* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i].real() * x[i].real() + x[i].imag() * x[i].imag();
    return acc;
}

void cmul_acc_scalar(cplx alpha, const cplx* a, const cplx* b, cplx* y, std::size_t n) {
    const double wr = alpha.real(), wi = alpha.imag();
    for (std::size_t i = 0; i < n; ++i) {
        const double pr = a[i].real() * b[i].real() - a[i].imag() * b[i].imag();
        const double pi = a[i].real() * b[i].imag() + a[i].imag() * b[i].real();
        y[i] = {y[i].real() + wr * pr - wi * pi, y[i].imag() + wr * pi + wi * pr};
    }
}

void quantize_scalar(const double* x, std::size_t n, const double* thresholds,
                     const double* levels, std::size_t num_levels, double* out) {
    const std::size_t nt = num_levels - 1;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t idx = 0;
        for (std::size_t t = 0; t < nt; ++t) idx += thresholds[t] < x[i] ? 1 : 0;
        out[i] = levels[idx];
    }
}

}  // namespace

const KernelTable& scalar_table() {
    static const KernelTable table{"scalar",       cdotc_scalar,    caxpy_scalar,
                                   cnorm2_scalar,  cmul_acc_scalar, quantize_scalar};
    return table;
}

}  // namespace gfra::kernels
