#include "gfra/fft.hpp"

#include <cmath>
#include <map>
#include <memory>

namespace gfra::dsp {
namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

struct Plan {
    std::size_t n = 0;
    std::vector<std::size_t> bitrev;
    CVec twiddle;  // exp(-j2pi k/n), k < n/2 (pow2) or k < n (direct)
};

std::unique_ptr<Plan> make_plan(std::size_t n) {
    auto p = std::make_unique<Plan>();
    p->n = n;
    if (is_pow2(n)) {
        p->bitrev.resize(n);
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n) ++bits;
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b) r |= ((i >> b) & 1U) << (bits - 1 - b);
            p->bitrev[i] = r;
        }
        p->twiddle.resize(n / 2);
    } else {
        p->twiddle.resize(n);
    }
    for (std::size_t k = 0; k < p->twiddle.size(); ++k) {
        const double a = -kTwoPi * static_cast<double>(k) / static_cast<double>(n);
        p->twiddle[k] = {std::cos(a), std::sin(a)};
    }
    return p;
}

const Plan& plan_for(std::size_t n) {
    thread_local std::map<std::size_t, std::unique_ptr<Plan>> cache;
    auto& slot = cache[n];
    if (!slot) slot = make_plan(n);
    return *slot;
}

}  // namespace

void fft(std::span<cplx> x, Direction dir) {
    const std::size_t n = x.size();
    if (n <= 1) return;
    const Plan& p = plan_for(n);
    const bool inv = dir == Direction::inverse;

    if (!is_pow2(n)) {
        CVec out(n);
        for (std::size_t k = 0; k < n; ++k) {
            cplx acc{};
            for (std::size_t t = 0; t < n; ++t) {
                const cplx w = p.twiddle[(k * t) % n];
                acc += x[t] * (inv ? std::conj(w) : w);
            }
            out[k] = acc;
        }
        std::copy(out.begin(), out.end(), x.begin());
        return;
    }

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = p.bitrev[i];
        if (i < j) std::swap(x[i], x[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const cplx w = inv ? std::conj(p.twiddle[j * step]) : p.twiddle[j * step];
                const cplx u = x[i + j];
                const cplx v = x[i + j + half] * w;
                x[i + j] = u + v;
                x[i + j + half] = u - v;
            }
        }
    }
}

void unitary_dft(std::span<cplx> x) {
    fft(x, Direction::forward);
    const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
    for (auto& v : x) v *= s;
}

void unitary_idft(std::span<cplx> x) {
    fft(x, Direction::inverse);
    const double s = 1.0 / std::sqrt(static_cast<double>(x.size()));
    for (auto& v : x) v *= s;
}

}  // namespace gfra::dsp
