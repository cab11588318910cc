#include "gfra/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gfra/kernels.hpp"

namespace gfra::quant {
namespace {

// Sorted samples with prefix sums; every cell is a contiguous index range.
struct SortedSamples {
    std::vector<double> x;
    std::vector<double> s1;  // s1[i] = sum_{j<i} x[j]
    std::vector<double> s2;

    explicit SortedSamples(std::span<const double> in) : x(in.begin(), in.end()) {
        std::sort(x.begin(), x.end());
        s1.assign(x.size() + 1, 0.0);
        s2.assign(x.size() + 1, 0.0);
        for (size_t i = 0; i < x.size(); ++i) {
            s1[i + 1] = s1[i] + x[i];
            s2[i + 1] = s2[i] + x[i] * x[i];
        }
    }
    size_t n() const { return x.size(); }
    // First index with x > t: x == t stays in the lower cell.
    size_t boundary(double t) const {
        return static_cast<size_t>(std::upper_bound(x.begin(), x.end(), t) - x.begin());
    }
    double cell_distortion(size_t lo, size_t hi, double c) const {
        const double cnt = static_cast<double>(hi - lo);
        const double d = (s2[hi] - s2[lo]) - 2.0 * c * (s1[hi] - s1[lo]) + cnt * c * c;
        return std::max(d, 0.0);
    }
    double mean(size_t lo, size_t hi) const { return (s1[hi] - s1[lo]) / static_cast<double>(hi - lo); }
};

std::vector<double> midpoints(const std::vector<double>& levels) {
    std::vector<double> t(levels.size() - 1);
    for (size_t i = 0; i + 1 < levels.size(); ++i) t[i] = 0.5 * (levels[i] + levels[i + 1]);
    return t;
}

std::vector<size_t> cell_bounds(const SortedSamples& ss, const std::vector<double>& thresholds) {
    std::vector<size_t> b(thresholds.size() + 2);
    b[0] = 0;
    for (size_t i = 0; i < thresholds.size(); ++i) b[i + 1] = ss.boundary(thresholds[i]);
    b.back() = ss.n();
    return b;
}

double total_distortion(const SortedSamples& ss, const std::vector<double>& levels) {
    const auto b = cell_bounds(ss, midpoints(levels));
    double d = 0.0;
    for (size_t i = 0; i < levels.size(); ++i) d += ss.cell_distortion(b[i], b[i + 1], levels[i]);
    return d;
}

}  // namespace

namespace {

struct UniformFit {
    double step = 0.0;
    double mse = 0.0;
};

std::vector<double> uniform_levels(size_t L, double step) {
    std::vector<double> lv(L);
    for (size_t i = 0; i < L; ++i) lv[i] = (static_cast<double>(i) - 0.5 * static_cast<double>(L - 1)) * step;
    return lv;
}

// Mid-rise uniform quantizer with the MSE-minimising step: coarse scan, then
// golden-section refinement around the best grid point.
UniformFit fit_uniform(const SortedSamples& ss, size_t L) {
    double amax = std::max(std::abs(ss.x.front()), std::abs(ss.x.back()));
    if (amax == 0.0) return {1.0, 0.0};
    auto mse_at = [&](double step) { return total_distortion(ss, uniform_levels(L, step)) / static_cast<double>(ss.n()); };

    const double hi = 2.0 * amax / static_cast<double>(L - 1 > 0 ? L - 1 : 1);
    const int grid = 400;
    UniformFit best{hi, std::numeric_limits<double>::infinity()};
    for (int i = 1; i <= grid; ++i) {
        const double s = hi * i / grid;
        const double m = mse_at(s);
        if (m < best.mse) best = {s, m};
    }
    double a = std::max(best.step - hi / grid, hi / grid * 1e-3), c = best.step + hi / grid;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double x1 = c - gr * (c - a), x2 = a + gr * (c - a);
    double f1 = mse_at(x1), f2 = mse_at(x2);
    for (int it = 0; it < 60; ++it) {
        if (f1 < f2) {
            c = x2; x2 = x1; f2 = f1; x1 = c - gr * (c - a); f1 = mse_at(x1);
        } else {
            a = x1; x1 = x2; f1 = f2; x2 = a + gr * (c - a); f2 = mse_at(x2);
        }
    }
    if (f1 < best.mse) best = {x1, f1};
    if (f2 < best.mse) best = {x2, f2};
    return best;
}

QuantizerCodebook lloyd_iterate(const SortedSamples& ss, int bits, std::vector<double> levels,
                                const LloydMaxOptions& opts) {
    const size_t L = levels.size();
    QuantizerCodebook cb;
    cb.bits = bits;
    const double n = static_cast<double>(ss.n());
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 0; it < opts.max_iters; ++it) {
        const auto b = cell_bounds(ss, midpoints(levels));
        double d = 0.0;
        for (size_t i = 0; i < L; ++i) d += ss.cell_distortion(b[i], b[i + 1], levels[i]);
        d /= n;
        if (!cb.distortion.empty() && d > cb.distortion.back() * (1.0 + 1e-12) + 1e-300) {
            throw std::logic_error("train_lloyd_max: distortion increased");
        }
        cb.distortion.push_back(d);
        cb.iterations = it + 1;
        if (d == 0.0 || (std::isfinite(prev) && (prev - d) <= opts.tol * prev)) break;
        prev = d;

        // Centroid step.
        std::vector<size_t> empty;
        for (size_t i = 0; i < L; ++i) {
            if (b[i + 1] > b[i]) {
                levels[i] = ss.mean(b[i], b[i + 1]);
            } else {
                empty.push_back(i);
            }
        }
        // Repair: split the worst populated cell at its centroid, reusing the
        // empty cell's level slot.
        std::vector<std::pair<size_t, size_t>> ranges(L);
        for (size_t i = 0; i < L; ++i) ranges[i] = {b[i], b[i + 1]};
        for (size_t e : empty) {
            size_t worst = L;
            double worst_d = -1.0;
            for (size_t i = 0; i < L; ++i) {
                const auto [lo, hi] = ranges[i];
                if (hi <= lo || ss.x[hi - 1] == ss.x[lo]) continue;
                const double cd = ss.cell_distortion(lo, hi, levels[i]);
                if (cd > worst_d) {
                    worst_d = cd;
                    worst = i;
                }
            }
            if (worst == L) break;
            const auto [lo, hi] = ranges[worst];
            const size_t mid = ss.boundary(levels[worst]);
            const size_t cut = std::clamp(mid, lo + 1, hi - 1);
            levels[worst] = ss.mean(lo, cut);
            levels[e] = ss.mean(cut, hi);
            ranges[worst] = {lo, cut};
            ranges[e] = {cut, hi};
        }
        std::sort(levels.begin(), levels.end());
    }
    cb.levels = levels;
    cb.thresholds = midpoints(levels);
    return cb;
}

}  // namespace

QuantizerCodebook train_lloyd_max(std::span<const double> samples, int bits, const LloydMaxOptions& opts) {
    if (bits < 1 || bits > 16) throw TrainingError("train_lloyd_max: bits must lie in [1, 16]");
    const size_t L = size_t{1} << bits;
    const SortedSamples ss(samples);

    std::vector<double> uniq;
    std::unique_copy(ss.x.begin(), ss.x.end(), std::back_inserter(uniq));
    if (uniq.size() < L) {
        throw TrainingError("train_lloyd_max: need at least " + std::to_string(L) +
                            " distinct samples, got " + std::to_string(uniq.size()));
    }

    // Lloyd only finds a local optimum, so it is run from two starts: sample
    // quantiles and the best uniform quantizer. The second start guarantees
    // the result is never worse than uniform quantization.
    std::vector<double> quantiles(L);
    for (size_t i = 0; i < L; ++i) quantiles[i] = uniq[(2 * i + 1) * uniq.size() / (2 * L)];
    QuantizerCodebook a = lloyd_iterate(ss, bits, std::move(quantiles), opts);
    QuantizerCodebook b = lloyd_iterate(ss, bits, uniform_levels(L, fit_uniform(ss, L).step), opts);
    return b.distortion.back() < a.distortion.back() ? b : a;
}

void quantize_real(std::span<const double> x, const QuantizerCodebook& cb, std::span<double> out) {
    if (out.size() != x.size()) throw DimensionError("quantize_real: output size mismatch");
    kernels::active().quantize(x.data(), x.size(), cb.thresholds.data(), cb.levels.data(),
                               cb.levels.size(), out.data());
}

CVec quantize(std::span<const cplx> r, const QuantizerCodebook& cb) {
    // std::complex<double> is layout-compatible with double[2].
    std::span<const double> flat(reinterpret_cast<const double*>(r.data()), 2 * r.size());
    CVec out(r.size());
    std::span<double> dst(reinterpret_cast<double*>(out.data()), 2 * out.size());
    quantize_real(flat, cb, dst);
    return out;
}

double quantizer_mse(std::span<const double> samples, const QuantizerCodebook& cb) {
    std::vector<double> q(samples.size());
    quantize_real(samples, cb, q);
    double acc = 0.0;
    for (size_t i = 0; i < q.size(); ++i) acc += (samples[i] - q[i]) * (samples[i] - q[i]);
    return acc / static_cast<double>(samples.size());
}

double optimal_uniform_mse(std::span<const double> samples, int bits) {
    const SortedSamples ss(samples);
    if (ss.n() == 0) return 0.0;
    return fit_uniform(ss, size_t{1} << bits).mse;
}

channel::MultiAntennaSignal FrontEnd::apply(const channel::MultiAntennaSignal& r) const {
    if (ideal()) return r;
    std::vector<double> train;
    for (const auto& ant : r) {
        const double* p = reinterpret_cast<const double*>(ant.data());
        train.insert(train.end(), p, p + 2 * ant.size());
    }
    const QuantizerCodebook cb = train_lloyd_max(train, bits_, opts_);
    channel::MultiAntennaSignal out;
    out.reserve(r.size());
    for (const auto& ant : r) out.push_back(quantize(ant, cb));
    return out;
}

}  // namespace gfra::quant
