#pragma once
// Grant-free receiver: non-ISI observation extraction, MMV sparse recovery of
// delay-domain CIRs (SOMP), channel-gain activity detection, Doppler
// super-resolution over TS snapshots, LS path-gain fitting and DD-domain CIR
// reconstruction. Also hosts the DD-pilot and CP-OFDM channel-estimation
// baselines.

#include <cstdint>
#include <span>
#include <vector>

#include "gfra/channel.hpp"
#include "gfra/types.hpp"
#include "gfra/waveform.hpp"

namespace gfra::rx {

using channel::MultiAntennaSignal;
using waveform::DDGrid;
using waveform::OtfsNumerology;

/// Delay uncertainty window: channel memory plus residual ToA.
struct DelayWindow {
    int L_max = 16;
    int D_max = 8;

    int taps() const { return L_max + D_max; }
    /// Non-ISI samples per TS, G = M_t - L_max - D_max.
    int non_isi_length(int ts_len) const { return ts_len - taps(); }
};

struct NonIsiObservation {
    CMatrix Y;  // G x (A * (N+1)), column a*(N+1) + i
    int snapshots = 0;
    int antennas = 0;
    std::vector<int> timestamps;  // absolute sample index of each window start

    int column(int antenna, int snapshot) const { return antenna * snapshots + snapshot; }
};

/// Copies [ts_start_i + L_max + D_max, ts_start_i + M_t) for every TS block
/// and antenna. Throws ConfigError when G <= 0.
NonIsiObservation extract_non_isi(const MultiAntennaSignal& received, const OtfsNumerology& num,
                                  const DelayWindow& win);

/// Block-structured sensing matrix: K blocks of H*L unit-norm atoms, one
/// per (ramp hypothesis, delay).
struct MmvDictionary {
    CMatrix atoms;               // rows x (K*H*L)
    std::vector<double> scale;   // original atom norms
    std::vector<int> terminals;  // terminal id per block
    std::vector<double> ramps;   // intra-window Doppler hypotheses [cycles/sample]
    int L = 0;

    int hypotheses() const { return ramps.empty() ? 1 : static_cast<int>(ramps.size()); }
    int width() const { return L * hypotheses(); }
    int blocks() const { return static_cast<int>(terminals.size()); }
    int block_of(int atom) const { return atom / width(); }
    int delay_of(int atom) const { return atom % L; }
    int hypothesis_of(int atom) const { return (atom % width()) / L; }
};

/// Atom (k, h, d) holds ts_k[L + j - d] * exp(j2pi ramps[h] j) for window rows
/// j in [0, G). An empty `ramps` means a single zero-Doppler hypothesis.
MmvDictionary build_dictionary(std::span<const waveform::TrainingSequence> ts, int ts_len,
                               const DelayWindow& win, std::span<const double> ramps = {});

/// Hypotheses centred in `count` equal slices of [0, nu_max], in cycles/sample.
std::vector<double> doppler_ramps(double nu_max, double sample_rate, int count);

/// Largest |<a_i, a_j>| between unit atoms of different blocks.
double max_cross_coherence(const MmvDictionary& dict);

struct SompStop {
    double threshold = 0.0;  // stop when residual < threshold * ||Y||^2
    double absolute = 0.0;   // ... or residual < absolute
    int max_taps = 0;
};

/// Row-sparse recovered CIRs with a support shared by all columns.
struct SparseCirSnapshots {
    int atoms = 0;               // K*L
    int columns = 0;
    std::vector<int> support;    // atom indices in selection order
    CMatrix taps;                // |support| x columns, in channel units (atom scale removed)
    double observed_energy = 0.0;
    double residual_energy = 0.0;
    std::vector<double> residual_history;  // after each selection
    int dof_rows = 0;            // observation rows (G or pilot count)

    /// Dense entry H[atom, column]; exactly zero off the support.
    cplx entry(int atom, int column) const;
};

/// Simultaneous OMP: greedy atom selection by summed correlation energy over
/// all measurement columns, joint LS refit on the support each iteration.
SparseCirSnapshots somp_recover(const CMatrix& Y, const MmvDictionary& dict, const SompStop& stop);

/// Noise floor in channel units: the per-sample residual power divided by the
/// mean squared atom norm, i.e. the LS noise level of one tap estimate.
double estimate_noise_floor(const SparseCirSnapshots& snap, const MmvDictionary& dict);

/// Terminal ids whose mean block energy exceeds tau * noise_floor.
std::vector<int> cg_ad(const SparseCirSnapshots& snap, const MmvDictionary& dict, double noise_floor,
                       double tau);

struct DopplerOptions {
    int pad_factor = 32;
    int newton_steps = 2;
};

/// Frequency in cycles per snapshot, in [0, 1), of a single complex tone
/// observed on one or more sequences (e.g. antennas) sharing the frequency.
/// Periodograms are summed across sequences, so stronger sequences weigh more.
double estimate_tone_frequency(std::span<const CVec> sequences, const DopplerOptions& opts = {});

/// Doppler [Hz] of one detected terminal from its dominant recovered tap.
/// The result lies in [-(span - nu_max)/2, nu_max + (span - nu_max)/2) with
/// span = B/(M + M_t). Throws std::invalid_argument with < 2 snapshots.
double estimate_doppler(const SparseCirSnapshots& snap, const MmvDictionary& dict, int terminal,
                        const NonIsiObservation& obs, const OtfsNumerology& num, double nu_max,
                        const DopplerOptions& opts = {});

/// Maps a tone frequency (cycles per snapshot) to Hz inside the window above.
double tone_to_doppler(double cycles, const OtfsNumerology& num, double nu_max);

struct TerminalEstimate {
    int id = 0;
    std::vector<int> delays;          // total delays (ToA + path)
    double doppler = 0.0;
    std::vector<CVec> gains;          // [tap][antenna]

    /// Reconstructed DD CIR at one antenna on an (M', N') lattice.
    DDGrid lattice(int antenna, const OtfsNumerology& num, int M_prime, int N_prime) const;
};

struct LsFitReport {
    double condition = 1.0;
    std::vector<std::pair<int, int>> dropped;  // (terminal id, delay)
    double residual_power = 0.0;               // per sample, after the fit
    /// Per terminal (same order as the fitted span): fitted gain energy over
    /// its LS estimation-noise energy. About 1 for a terminal with no signal.
    std::vector<double> activity;
};

/// Regenerates the TS-section response of every (terminal, delay) pair using
/// the estimated Doppler and solves the joint LS for per-antenna gains.
/// Rank-deficient bases drop their weakest tap and refit. The activity
/// statistic never assumes a noise level below `min_noise_var`, so leftover
/// model mismatch on a noiseless frame is not mistaken for a terminal.
LsFitReport ls_fit_gains(const NonIsiObservation& obs, std::span<TerminalEstimate> terminals,
                         std::span<const waveform::TrainingSequence> ts_by_terminal,
                         const OtfsNumerology& num, const DelayWindow& win, double min_noise_var = 0.0);

/// Greedy growth of the per-terminal delay supports on the Doppler-compensated
/// TS observation: a (terminal, delay) candidate joins while its residual
/// correlation energy summed over antennas exceeds `significance` * A * sigma^2,
/// with sigma^2 the current residual power per sample (at least
/// `min_noise_var`). Returns the number of taps added.
int refine_delay_support(const NonIsiObservation& obs, std::span<TerminalEstimate> terminals,
                         std::span<const waveform::TrainingSequence> ts_by_terminal,
                         const OtfsNumerology& num, const DelayWindow& win, double significance,
                         double min_noise_var = 0.0);

struct ReceiverOptions {
    DelayWindow window;
    double support_significance = 2.5;  // <= 0 disables refine_delay_support
    double cgad_tau = 3.0;
    double confirm_tau = 20.0;  // threshold on LsFitReport::activity
    int somp_max_taps = 30;
    double stop_factor = 1.05;
    double noise_var = 0.0;  // nominal thermal noise known to the receiver
    double nu_max = 178.2e3;
    DopplerOptions doppler;
};

struct EstimationResult {
    std::vector<int> ats;                 // sorted terminal ids
    std::vector<int> candidates;          // CG-AD output on the SOMP stage
    std::vector<TerminalEstimate> terminals;
    double noise_floor = 0.0;
    SparseCirSnapshots snapshots;
    LsFitReport fit;

    const TerminalEstimate* find(int id) const;
};

/// Full TS-OTFS ATI + CE chain on a (possibly quantized) received frame.
/// `ts_by_terminal` is indexed by terminal id; `dict` must be built from it.
EstimationResult estimate_ts_otfs(const MultiAntennaSignal& received, const OtfsNumerology& num,
                                  const MmvDictionary& dict,
                                  std::span<const waveform::TrainingSequence> ts_by_terminal,
                                  const ReceiverOptions& opts);

// ---------------------------------------------------------------------------
// DD-pilot baseline
// ---------------------------------------------------------------------------

struct DdPilotParams {
    int M_d = 128;          // delay bins of the pilot frame (M + M_t keeps airtime equal)
    int N = 8;
    int cp_len = 64;        // frame-level cyclic prefix
    int guard_delay = 23;   // readout rows [0, guard_delay]
    double amplitude = 24.0;
    double threshold_sigma = 3.0;

    int frame_length() const { return cp_len + N * M_d; }
};

/// Airtime- and energy-matched pilot frame parameters for a TS-OTFS numerology:
/// pilot energy equals the (N+1) M_t training energy.
DdPilotParams dd_pilot_params_for(const OtfsNumerology& num, const DelayWindow& win);

/// Time-domain frame carrying a single DD impulse pilot at (0, 0).
CVec dd_pilot_frame(const DdPilotParams& p);

/// Threshold readout around the pilot; returns the CIR estimate at one
/// antenna on the (M, N) lattice of `num`. Throws ConfigError when the guard
/// cannot hold the channel memory.
DDGrid dd_pilot_baseline_ce(std::span<const cplx> received, const DdPilotParams& p, double noise_var,
                            const OtfsNumerology& num, const DelayWindow& win);

// ---------------------------------------------------------------------------
// CP-OFDM baseline
// ---------------------------------------------------------------------------

/// Unit-modulus QPSK pilot values on the pilot subcarriers, seeded per terminal.
CVec make_ofdm_pilots(uint64_t seed, int terminal, int count);

/// Atom (k, d) on pilot subcarrier m_i: p_k[i] exp(-j2pi m_i d / M).
MmvDictionary build_ofdm_dictionary(std::span<const CVec> pilots, const waveform::OfdmParams& p,
                                    const DelayWindow& win);

struct OfdmEstimate {
    std::vector<int> ats;
    std::vector<int> ids;                          // estimated terminals, same order as `channel`
    std::vector<std::vector<waveform::TFGrid>> channel;  // [terminal][antenna]
    double noise_floor = 0.0;
    SparseCirSnapshots snapshots;

    int index_of(int id) const;
};

/// SOMP + CG-AD over the pilot subcarriers with a quasi-static (Doppler-blind)
/// model, then per-symbol LS delay-domain taps interpolated to every subcarrier.
OfdmEstimate ofdm_baseline_receiver(const MultiAntennaSignal& received, const waveform::OfdmParams& p,
                                    const MmvDictionary& dict, const ReceiverOptions& opts);

}  // namespace gfra::rx
