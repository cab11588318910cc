#pragma once
// Terminal population, activity, LEO terrestrial-satellite-link channels and
// their application to superimposed uplink frames.

#include <cstdint>
#include <span>
#include <vector>

#include "gfra/types.hpp"
#include "gfra/waveform.hpp"

namespace gfra::channel {

struct ConstellationGeometry {
    double altitude = 550e3;        // h_o [m]
    double carrier_freq = 10e9;     // f_c [Hz]
    double nu_max = 178.2e3;        // Doppler cap [Hz]
    double speed_of_light = 299792458.0;
    double earth_mu = 3.986004418e14;  // GM of Earth [m^3/s^2]
    double earth_radius = 6371e3;

    /// Circular-orbit speed sqrt(mu / (R_E + h_o)).
    double orbital_speed() const;
};

/// Doppler of a terminal seen at `elevation` (radians) by a satellite passing
/// in the terminal's orbital plane: nu = f_c/c * v_sat * cos(contact angle),
/// where cos(contact angle) = R_E cos(elevation) / (R_E + h_o). Clipped to
/// [0, nu_max]. Throws std::domain_error unless 0 < elevation <= pi/2.
double doppler_from_geometry(double elevation, const ConstellationGeometry& geom);

struct Path {
    int delay = 0;  // tap index l_p, excluding the ToA offset
    cplx gain;
};

struct TerminalProfile {
    int id = 0;
    waveform::TrainingSequence ts;
    bool active = false;
    std::vector<Path> paths;
    double doppler = 0.0;  // Hz, shared by every path
    int toa = 0;           // residual ToA offset in samples
    double aoa_theta = 0.0;  // off-boresight angle [rad]
    double aoa_phi = 0.0;    // azimuth [rad]

    int total_delay(const Path& p) const { return toa + p.delay; }
};

struct PopulationParams {
    int ts_len = 64;
    uint64_t ts_seed = 1;
    int paths = 3;
    int L_max = 16;
    int D_max = 8;
    double nu_max = 178.2e3;
    double rician_k_db = 10.0;   // line-of-sight factor on path 0
    double pdp_decay_db = 3.0;   // per-path decay of the diffuse paths
    double cone_half_angle = kPi / 3.0;
};

/// K profiles with i.i.d. geometry, deterministic under `seed`.
/// Training sequences depend only on (params.ts_seed, id).
std::vector<TerminalProfile> draw_population(int K, uint64_t seed, const PopulationParams& params);

struct ActivityPattern {
    int K = 0;
    std::vector<int> active;  // sorted ascending
};

/// Uniformly random K_a-subset. Throws ConfigError when K_a > K or K_a < 0.
ActivityPattern draw_activity(std::span<const TerminalProfile> population, int K_a, uint64_t seed);

/// Ideal array response, unit modulus: square UPA when A is a perfect square,
/// half-wavelength ULA otherwise.
CVec steering_vector(double theta, double phi, int A);

struct ChannelRealization {
    int antennas = 1;
    double noise_var = 0.0;
    double sample_rate = 1.0;
    std::vector<TerminalProfile> terminals;  // active terminals only
    std::vector<CVec> steering;              // per terminal, `antennas` entries

    const TerminalProfile* find(int id) const;
    int index_of(int id) const;  // -1 when absent
};

/// SNR per active terminal at each receive antenna: channel power is unit, so
/// noise_var = 10^(-snr_db/10). Use +infinity for a noiseless link.
ChannelRealization make_realization(std::span<const TerminalProfile> population,
                                    const ActivityPattern& activity, int antennas,
                                    double snr_db, double sample_rate);

struct TxSignal {
    int terminal = 0;
    CVec samples;
};

enum class ChannelMode {
    linear,  // samples outside the frame are zero
    cyclic,  // delays wrap around the frame (test mode)
};

using MultiAntennaSignal = std::vector<CVec>;

/// r_a[t] = sum_k steer_a(k) sum_p g_kp exp(j2pi nu_k t/B) s_k[t - l_kp - toa_k] + w_a[t]
MultiAntennaSignal apply_channel(std::span<const TxSignal> frames, const ChannelRealization& real,
                                 int length, uint64_t noise_seed, ChannelMode mode = ChannelMode::linear);

/// Single-terminal noiseless response without steering, accumulated into `out`.
/// `time_offset` is the absolute sample index of s[0].
void accumulate_terminal_response(std::span<const cplx> s, std::span<const Path> paths, int toa,
                                  double doppler, double sample_rate, std::span<cplx> out,
                                  ChannelMode mode = ChannelMode::linear);

struct LatticeTap {
    int delay = 0;  // total delay (toa + path delay)
    cplx gain;
};

/// DD-domain CIR of one terminal on an (M', N') lattice. Delay rows are the
/// integer total delays; along Doppler each tap contributes the N-sample
/// Dirichlet kernel D_N(nu*N*T - k'*N/N'), so off-grid Doppler leaks and
/// N' = 2N samples the same kernel twice as densely. On-grid Doppler (within
/// 1e-9 bins) yields exactly one nonzero per tap.
waveform::DDGrid lattice_cir(std::span<const LatticeTap> taps, double doppler,
                             const waveform::OtfsNumerology& num, int M_prime, int N_prime);

/// Ground-truth lattice CIR of `terminal` as seen at `antenna` (steering applied).
waveform::DDGrid dd_cir_on_lattice(const ChannelRealization& real, int terminal, int antenna,
                                   const waveform::OtfsNumerology& num, int M_prime, int N_prime);

/// Dirichlet kernel (1/N) sum_{n<N} exp(j2pi n u / N).
cplx dirichlet(double u, int N);

}  // namespace gfra::channel
