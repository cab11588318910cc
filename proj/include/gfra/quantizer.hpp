#pragma once
// Nonideal ADC model: elementwise Lloyd-Max scalar quantization of the real
// and imaginary parts of the received signal.

#include <span>
#include <vector>

#include "gfra/channel.hpp"
#include "gfra/types.hpp"

namespace gfra::quant {

struct QuantizerCodebook {
    int bits = 0;
    std::vector<double> levels;      // 2^bits, strictly ascending
    std::vector<double> thresholds;  // midpoints between adjacent levels
    std::vector<double> distortion;  // per-iteration MSE of the nearest-neighbour partition
    int iterations = 0;
};

struct LloydMaxOptions {
    int max_iters = 100;
    double tol = 1e-6;  // relative distortion change
};

/// Alternating nearest-neighbour / centroid updates starting from sample
/// quantiles. Empty cells are repaired by splitting the highest-distortion
/// cell at its centroid. Throws TrainingError with fewer than 2^bits distinct
/// samples or bits < 1.
QuantizerCodebook train_lloyd_max(std::span<const double> samples, int bits,
                                  const LloydMaxOptions& opts = {});

/// Nearest level per element; ties resolve to the lower level.
void quantize_real(std::span<const double> x, const QuantizerCodebook& cb, std::span<double> out);
CVec quantize(std::span<const cplx> r, const QuantizerCodebook& cb);

/// Mean squared error of `cb` on `samples`.
double quantizer_mse(std::span<const double> samples, const QuantizerCodebook& cb);

/// Mid-rise uniform quantizer with 2^bits levels and the step (loading
/// factor) that minimises MSE on `samples`. Returns that minimum MSE.
double optimal_uniform_mse(std::span<const double> samples, int bits);

/// The receive front end: either infinite resolution or a per-frame adaptive
/// Lloyd-Max ADC trained on the union of real and imaginary parts.
class FrontEnd {
public:
    static FrontEnd passthrough() { return FrontEnd(0, {}); }
    static FrontEnd lloyd_max(int bits, LloydMaxOptions opts = {}) { return FrontEnd(bits, opts); }
    /// adc_bits == 0 selects the ideal ADC.
    static FrontEnd from_bits(int adc_bits) { return adc_bits == 0 ? passthrough() : lloyd_max(adc_bits); }

    int bits() const { return bits_; }
    bool ideal() const { return bits_ == 0; }
    channel::MultiAntennaSignal apply(const channel::MultiAntennaSignal& r) const;

private:
    FrontEnd(int bits, LloydMaxOptions opts) : bits_(bits), opts_(opts) {}
    int bits_;
    LloydMaxOptions opts_;
};

}  // namespace gfra::quant
