#pragma once
// Delay-Doppler modem, TS-OTFS frame assembly and the CP-OFDM baseline modem.
//
// Conventions (fixed here, used everywhere):
//   DD grid      X[l,k], l = delay bin in [0,M), k = Doppler bin in [0,N)
//   TF grid      X_tf[n,m], n = symbol in [0,N), m = subcarrier in [0,M)
//   isfft        X_tf[n,m] = 1/sqrt(NM) sum_k sum_l X[l,k] exp(j2pi(nk/N - ml/M))
//   modulation   block_n = unitary IDFT_M of X_tf[n,.], rectangular pulse, no CP

#include <cstdint>
#include <span>
#include <vector>

#include "gfra/types.hpp"

namespace gfra::waveform {

struct OtfsNumerology {
    int M = 64;              // delay bins / subcarriers
    int N = 8;               // Doppler bins / symbols
    int ts_len = 64;         // M_t, training-sequence length in samples
    double delta_f = 960e3;  // subcarrier spacing [Hz]
    double carrier_freq = 10e9;

    double sample_rate() const { return M * delta_f; }
    /// Distance between consecutive TS starts (and consecutive payload blocks).
    int block_stride() const { return M + ts_len; }
    int frame_length() const { return (N + 1) * ts_len + N * M; }
    /// Symbol period seen by the DD lattice, (M + M_t)/B seconds.
    double symbol_period() const { return block_stride() / sample_rate(); }
    /// Doppler spacing of an N'-point lattice, 1/(N' * symbol_period).
    double doppler_bin(int n_prime) const { return 1.0 / (n_prime * symbol_period()); }
    /// Doppler span resolvable from TS snapshots, B/(M+M_t).
    double snapshot_doppler_span() const { return sample_rate() / block_stride(); }

    /// Throws ConfigError on M<2, N<1, delta_f<=0 or ts_len<0.
    void validate() const;
};

class DDGrid {
public:
    DDGrid() = default;
    DDGrid(int M, int N) : M_(M), N_(N), data_(static_cast<size_t>(M) * N) {}

    int M() const { return M_; }
    int N() const { return N_; }
    cplx& operator()(int l, int k) { return data_[static_cast<size_t>(k) * M_ + l]; }
    const cplx& operator()(int l, int k) const { return data_[static_cast<size_t>(k) * M_ + l]; }
    std::span<cplx> values() { return data_; }
    std::span<const cplx> values() const { return data_; }
    double energy() const;

private:
    int M_ = 0;
    int N_ = 0;
    CVec data_;  // Doppler-major: column k holds the M delay bins
};

class TFGrid {
public:
    TFGrid() = default;
    TFGrid(int symbols, int subcarriers)
        : N_(symbols), M_(subcarriers), data_(static_cast<size_t>(symbols) * subcarriers) {}

    int symbols() const { return N_; }
    int subcarriers() const { return M_; }
    cplx& operator()(int n, int m) { return data_[static_cast<size_t>(n) * M_ + m]; }
    const cplx& operator()(int n, int m) const { return data_[static_cast<size_t>(n) * M_ + m]; }
    std::span<cplx> symbol(int n) { return {data_.data() + static_cast<size_t>(n) * M_, static_cast<size_t>(M_)}; }
    std::span<const cplx> symbol(int n) const {
        return {data_.data() + static_cast<size_t>(n) * M_, static_cast<size_t>(M_)};
    }
    std::span<cplx> values() { return data_; }
    std::span<const cplx> values() const { return data_; }

private:
    int N_ = 0;
    int M_ = 0;
    CVec data_;
};

/// N consecutive time-domain blocks of M samples each (block n at offset n*M).
struct TimeBlocks {
    int M = 0;
    int N = 0;
    CVec samples;

    std::span<cplx> block(int n) { return {samples.data() + static_cast<size_t>(n) * M, static_cast<size_t>(M)}; }
    std::span<const cplx> block(int n) const {
        return {samples.data() + static_cast<size_t>(n) * M, static_cast<size_t>(M)};
    }
};

TFGrid isfft(const DDGrid& grid);
DDGrid sfft(const TFGrid& tf);

TimeBlocks otfs_modulate(const DDGrid& grid);
DDGrid otfs_demodulate(const TimeBlocks& payload);

struct TrainingSequence {
    int terminal = 0;
    CVec samples;
};

/// Unit-power i.i.d. complex Gaussian sequence seeded by (seed, terminal).
TrainingSequence make_training_sequence(uint64_t seed, int terminal, int length);

struct FrameLayout {
    int M = 0;
    int N = 0;
    int ts_len = 0;

    explicit FrameLayout(const OtfsNumerology& num) : M(num.M), N(num.N), ts_len(num.ts_len) {}
    int ts_start(int i) const { return i * (M + ts_len); }
    int payload_start(int n) const { return ts_len + n * (M + ts_len); }
    int length() const { return (N + 1) * ts_len + N * M; }
};

struct TsOtfsFrame {
    CVec samples;
    std::vector<int> ts_starts;       // N+1 entries
    std::vector<int> payload_starts;  // N entries
};

/// Layout [TS | P0 | TS | P1 | ... | TS | P_{N-1} | TS].
TsOtfsFrame assemble_frame(const DDGrid& grid, const TrainingSequence& ts);
TsOtfsFrame assemble_frame(const TimeBlocks& payload, std::span<const cplx> ts);

struct ParsedFrame {
    DDGrid grid;
    CVec ts;
};
ParsedFrame parse_frame(const TsOtfsFrame& frame, const OtfsNumerology& num);

/// Copies the N payload windows out of a frame-length signal.
TimeBlocks extract_payload(std::span<const cplx> signal, const OtfsNumerology& num);

/// Gray-labelled constellation. Points are stored in label order, so ties in
/// nearest-point decisions resolve to the lexicographically smallest label.
class Constellation {
public:
    static Constellation qpsk();
    static Constellation qam16();

    int bits_per_symbol() const { return bits_; }
    std::span<const cplx> points() const { return points_; }
    CVec map(std::span<const uint8_t> bits) const;
    /// Index of the nearest point; ties go to the smaller index.
    int nearest(cplx v) const;

private:
    int bits_ = 0;
    CVec points_;
};

// ---------------------------------------------------------------------------
// CP-OFDM baseline
// ---------------------------------------------------------------------------

struct OfdmParams {
    int M = 64;             // subcarriers (FFT size)
    int symbols = 8;        // OFDM symbols per frame
    int cp_len = 64;        // cyclic prefix length
    int pilot_spacing = 2;  // comb pilots on every symbol at m % spacing == 0

    int frame_length() const { return symbols * (M + cp_len); }
    std::vector<int> pilot_subcarriers() const;
    std::vector<int> data_subcarriers() const;
    /// Throws ConfigError when the CP cannot absorb the channel memory.
    void validate(int channel_memory) const;
};

/// Baseline parameters that occupy the same airtime as a TS-OTFS frame.
OfdmParams ofdm_params_for(const OtfsNumerology& num, int pilot_spacing);

CVec ofdm_modulate(const TFGrid& grid, const OfdmParams& p);
TFGrid ofdm_demodulate(std::span<const cplx> samples, const OfdmParams& p);

/// Single-user LS estimate at the pilots, linearly interpolated across
/// subcarriers (cyclically) on every symbol.
TFGrid ofdm_ls_channel_estimate(const TFGrid& received, const TFGrid& pilots, const OfdmParams& p);
/// One-tap zero-forcing equalizer.
TFGrid ofdm_equalize(const TFGrid& received, const TFGrid& channel);

}  // namespace gfra::waveform
