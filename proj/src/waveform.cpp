#include "gfra/waveform.hpp"

#include <algorithm>
#include <cmath>

#include "gfra/fft.hpp"
#include "gfra/kernels.hpp"
#include "gfra/rng.hpp"

namespace gfra::waveform {

void OtfsNumerology::validate() const {
    if (M < 2) throw ConfigError("M", "M must be >= 2");
    if (N < 1) throw ConfigError("N", "N must be >= 1");
    if (!(delta_f > 0.0)) throw ConfigError("delta_f", "delta_f must be > 0");
    if (ts_len < 0) throw ConfigError("ts_len", "ts_len must be >= 0");
}

double DDGrid::energy() const { return kernels::cnorm2(data_); }

TFGrid isfft(const DDGrid& grid) {
    const int M = grid.M(), N = grid.N();
    TFGrid tf(N, M);
    CVec col(N);
    // Doppler -> time (inverse DFT over k) for each delay bin.
    for (int l = 0; l < M; ++l) {
        for (int k = 0; k < N; ++k) col[k] = grid(l, k);
        dsp::fft(col, dsp::Direction::inverse);
        for (int n = 0; n < N; ++n) tf(n, l) = col[n];
    }
    // Delay -> frequency (forward DFT over l) for each symbol.
    const double scale = 1.0 / std::sqrt(static_cast<double>(M) * N);
    for (int n = 0; n < N; ++n) {
        auto row = tf.symbol(n);
        dsp::fft(row, dsp::Direction::forward);
        for (auto& v : row) v *= scale;
    }
    return tf;
}

DDGrid sfft(const TFGrid& tf) {
    const int M = tf.subcarriers(), N = tf.symbols();
    DDGrid grid(M, N);
    TFGrid tmp = tf;
    for (int n = 0; n < N; ++n) dsp::fft(tmp.symbol(n), dsp::Direction::inverse);
    const double scale = 1.0 / std::sqrt(static_cast<double>(M) * N);
    CVec col(N);
    for (int l = 0; l < M; ++l) {
        for (int n = 0; n < N; ++n) col[n] = tmp(n, l);
        dsp::fft(col, dsp::Direction::forward);
        for (int k = 0; k < N; ++k) grid(l, k) = col[k] * scale;
    }
    return grid;
}

// isfft followed by a unitary IDFT per symbol collapses to an N-point inverse
// DFT along Doppler for every delay bin; the block samples are delay-indexed.
TimeBlocks otfs_modulate(const DDGrid& grid) {
    const int M = grid.M(), N = grid.N();
    TimeBlocks out{M, N, CVec(static_cast<size_t>(M) * N)};
    const double scale = 1.0 / std::sqrt(static_cast<double>(N));
    CVec col(N);
    for (int l = 0; l < M; ++l) {
        for (int k = 0; k < N; ++k) col[k] = grid(l, k);
        dsp::fft(col, dsp::Direction::inverse);
        for (int n = 0; n < N; ++n) out.samples[static_cast<size_t>(n) * M + l] = col[n] * scale;
    }
    return out;
}

DDGrid otfs_demodulate(const TimeBlocks& payload) {
    const int M = payload.M, N = payload.N;
    if (M <= 0 || N <= 0 || payload.samples.size() != static_cast<size_t>(M) * N) {
        throw DimensionError("otfs_demodulate: expected N blocks of M samples");
    }
    DDGrid grid(M, N);
    const double scale = 1.0 / std::sqrt(static_cast<double>(N));
    CVec col(N);
    for (int l = 0; l < M; ++l) {
        for (int n = 0; n < N; ++n) col[n] = payload.samples[static_cast<size_t>(n) * M + l];
        dsp::fft(col, dsp::Direction::forward);
        for (int k = 0; k < N; ++k) grid(l, k) = col[k] * scale;
    }
    return grid;
}

TrainingSequence make_training_sequence(uint64_t seed, int terminal, int length) {
    Rng rng(split_seed(seed, static_cast<uint64_t>(terminal)));
    TrainingSequence ts{terminal, CVec(length)};
    for (auto& v : ts.samples) v = complex_gaussian(rng);
    if (length > 0) {
        const double p = kernels::cnorm2(ts.samples) / length;
        const double s = 1.0 / std::sqrt(p);
        for (auto& v : ts.samples) v *= s;
    }
    return ts;
}

TsOtfsFrame assemble_frame(const TimeBlocks& payload, std::span<const cplx> ts) {
    const int M = payload.M, N = payload.N;
    const int mt = static_cast<int>(ts.size());
    TsOtfsFrame f;
    f.samples.assign(static_cast<size_t>((N + 1) * mt + N * M), cplx{});
    for (int i = 0; i <= N; ++i) {
        const int start = i * (M + mt);
        f.ts_starts.push_back(start);
        std::copy(ts.begin(), ts.end(), f.samples.begin() + start);
    }
    for (int n = 0; n < N; ++n) {
        const int start = mt + n * (M + mt);
        f.payload_starts.push_back(start);
        auto b = payload.block(n);
        std::copy(b.begin(), b.end(), f.samples.begin() + start);
    }
    return f;
}

TsOtfsFrame assemble_frame(const DDGrid& grid, const TrainingSequence& ts) {
    if (ts.samples.empty()) throw DimensionError("assemble_frame: empty training sequence");
    return assemble_frame(otfs_modulate(grid), ts.samples);
}

TimeBlocks extract_payload(std::span<const cplx> signal, const OtfsNumerology& num) {
    const FrameLayout lay(num);
    if (signal.size() < static_cast<size_t>(lay.length())) {
        throw DimensionError("extract_payload: signal shorter than frame");
    }
    TimeBlocks blocks{num.M, num.N, CVec(static_cast<size_t>(num.M) * num.N)};
    for (int n = 0; n < num.N; ++n) {
        auto src = signal.subspan(lay.payload_start(n), num.M);
        std::copy(src.begin(), src.end(), blocks.block(n).begin());
    }
    return blocks;
}

ParsedFrame parse_frame(const TsOtfsFrame& frame, const OtfsNumerology& num) {
    const FrameLayout lay(num);
    if (frame.samples.size() != static_cast<size_t>(lay.length())) {
        throw DimensionError("parse_frame: frame length does not match numerology");
    }
    ParsedFrame out;
    out.ts.assign(frame.samples.begin(), frame.samples.begin() + num.ts_len);
    out.grid = otfs_demodulate(extract_payload(frame.samples, num));
    return out;
}

Constellation Constellation::qpsk() {
    Constellation c;
    c.bits_ = 2;
    const double s = 1.0 / std::sqrt(2.0);
    for (int label = 0; label < 4; ++label) {
        const double re = (label & 2) ? -s : s;
        const double im = (label & 1) ? -s : s;
        c.points_.emplace_back(re, im);
    }
    return c;
}

Constellation Constellation::qam16() {
    Constellation c;
    c.bits_ = 4;
    const double s = 1.0 / std::sqrt(10.0);
    auto axis = [](int g) {
        switch (g) {
            case 0b00: return -3.0;
            case 0b01: return -1.0;
            case 0b11: return 1.0;
            default: return 3.0;
        }
    };
    for (int label = 0; label < 16; ++label) {
        c.points_.emplace_back(s * axis(label >> 2), s * axis(label & 3));
    }
    return c;
}

CVec Constellation::map(std::span<const uint8_t> bits) const {
    if (bits.size() % bits_ != 0) throw DimensionError("Constellation::map: bit count not a multiple");
    CVec out(bits.size() / bits_);
    for (size_t i = 0; i < out.size(); ++i) {
        int label = 0;
        for (int b = 0; b < bits_; ++b) label = (label << 1) | (bits[i * bits_ + b] & 1);
        out[i] = points_[label];
    }
    return out;
}

int Constellation::nearest(cplx v) const {
    int best = 0;
    double best_d = std::norm(v - points_[0]);
    for (int i = 1; i < static_cast<int>(points_.size()); ++i) {
        const double d = std::norm(v - points_[i]);
        if (d < best_d) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

// ---------------------------------------------------------------------------

std::vector<int> OfdmParams::pilot_subcarriers() const {
    std::vector<int> out;
    for (int m = 0; m < M; m += pilot_spacing) out.push_back(m);
    return out;
}

std::vector<int> OfdmParams::data_subcarriers() const {
    std::vector<int> out;
    for (int m = 0; m < M; ++m)
        if (m % pilot_spacing != 0) out.push_back(m);
    return out;
}

void OfdmParams::validate(int channel_memory) const {
    if (M < 2) throw ConfigError("M", "OFDM needs at least 2 subcarriers");
    if (symbols < 1) throw ConfigError("N", "OFDM needs at least one symbol");
    if (pilot_spacing < 1) throw ConfigError("ofdm_pilot_spacing", "pilot spacing must be >= 1");
    if (cp_len < channel_memory) {
        throw ConfigError("ts_len", "CP length " + std::to_string(cp_len) +
                                        " shorter than channel memory " + std::to_string(channel_memory));
    }
}

OfdmParams ofdm_params_for(const OtfsNumerology& num, int pilot_spacing) {
    // N symbols of (M + M_t): one M_t shorter than the TS-OTFS frame.
    return OfdmParams{num.M, num.N, num.ts_len, pilot_spacing};
}

CVec ofdm_modulate(const TFGrid& grid, const OfdmParams& p) {
    if (grid.symbols() != p.symbols || grid.subcarriers() != p.M) {
        throw DimensionError("ofdm_modulate: grid shape mismatch");
    }
    CVec out(static_cast<size_t>(p.frame_length()));
    CVec sym(p.M);
    for (int n = 0; n < p.symbols; ++n) {
        auto src = grid.symbol(n);
        std::copy(src.begin(), src.end(), sym.begin());
        dsp::unitary_idft(sym);
        auto* dst = out.data() + static_cast<size_t>(n) * (p.M + p.cp_len);
        std::copy(sym.end() - p.cp_len, sym.end(), dst);
        std::copy(sym.begin(), sym.end(), dst + p.cp_len);
    }
    return out;
}

TFGrid ofdm_demodulate(std::span<const cplx> samples, const OfdmParams& p) {
    if (samples.size() < static_cast<size_t>(p.frame_length())) {
        throw DimensionError("ofdm_demodulate: signal shorter than frame");
    }
    TFGrid grid(p.symbols, p.M);
    for (int n = 0; n < p.symbols; ++n) {
        auto src = samples.subspan(static_cast<size_t>(n) * (p.M + p.cp_len) + p.cp_len, p.M);
        auto dst = grid.symbol(n);
        std::copy(src.begin(), src.end(), dst.begin());
        dsp::unitary_dft(dst);
    }
    return grid;
}

TFGrid ofdm_ls_channel_estimate(const TFGrid& received, const TFGrid& pilots, const OfdmParams& p) {
    const auto pil = p.pilot_subcarriers();
    TFGrid h(p.symbols, p.M);
    for (int n = 0; n < p.symbols; ++n) {
        CVec ls(pil.size());
        for (size_t i = 0; i < pil.size(); ++i) ls[i] = received(n, pil[i]) / pilots(n, pil[i]);
        for (int m = 0; m < p.M; ++m) {
            // Cyclic linear interpolation between the surrounding pilots.
            const int i0 = m / p.pilot_spacing;
            const int base = pil[static_cast<size_t>(i0) % pil.size()];
            const double frac = static_cast<double>(m - base) / p.pilot_spacing;
            const cplx a = ls[static_cast<size_t>(i0) % pil.size()];
            const cplx b = ls[static_cast<size_t>(i0 + 1) % pil.size()];
            h(n, m) = (1.0 - frac) * a + frac * b;
        }
    }
    return h;
}

TFGrid ofdm_equalize(const TFGrid& received, const TFGrid& channel) {
    TFGrid out(received.symbols(), received.subcarriers());
    for (int n = 0; n < received.symbols(); ++n)
        for (int m = 0; m < received.subcarriers(); ++m) out(n, m) = received(n, m) / channel(n, m);
    return out;
}

}  // namespace gfra::waveform
