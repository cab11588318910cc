#pragma once

#include <span>

#include "gfra/types.hpp"

namespace gfra::dsp {

enum class Direction { forward, inverse };

/// Unnormalized DFT in place: forward uses exp(-j2pi kn/L), inverse exp(+j2pi kn/L).
/// Radix-2 for powers of two, direct evaluation otherwise.
void fft(std::span<cplx> x, Direction dir);

/// Unitary variants (scaled by 1/sqrt(L)).
void unitary_dft(std::span<cplx> x);
void unitary_idft(std::span<cplx> x);

}  // namespace gfra::dsp
