#include "gfra/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "gfra/kernels.hpp"
#include "gfra/rng.hpp"

namespace gfra::channel {

double ConstellationGeometry::orbital_speed() const {
    return std::sqrt(earth_mu / (earth_radius + altitude));
}

double doppler_from_geometry(double elevation, const ConstellationGeometry& geom) {
    if (!(elevation > 0.0) || elevation > kPi / 2.0 + 1e-12) {
        throw std::domain_error("doppler_from_geometry: elevation must lie in (0, pi/2]");
    }
    const double cos_contact =
        geom.earth_radius * std::cos(elevation) / (geom.earth_radius + geom.altitude);
    const double nu = geom.carrier_freq / geom.speed_of_light * geom.orbital_speed() * cos_contact;
    return std::clamp(nu, 0.0, geom.nu_max);
}

std::vector<TerminalProfile> draw_population(int K, uint64_t seed, const PopulationParams& pp) {
    if (K < 1) throw ConfigError("K", "K must be >= 1");
    const int P = std::clamp(pp.paths, 1, std::max(1, pp.L_max));
    const double k_lin = std::pow(10.0, pp.rician_k_db / 10.0);
    const double los_power = P > 1 ? k_lin / (k_lin + 1.0) : 1.0;

    std::vector<double> diffuse(P, 0.0);
    if (P > 1) {
        double total = 0.0;
        for (int p = 1; p < P; ++p) total += diffuse[p] = std::pow(10.0, -pp.pdp_decay_db * (p - 1) / 10.0);
        for (int p = 1; p < P; ++p) diffuse[p] *= (1.0 - los_power) / total;
    }

    std::vector<TerminalProfile> pop;
    pop.reserve(K);
    for (int id = 0; id < K; ++id) {
        Rng rng(split_seed(seed, static_cast<uint64_t>(id)));
        TerminalProfile t;
        t.id = id;
        t.ts = waveform::make_training_sequence(pp.ts_seed, id, pp.ts_len);
        t.doppler = pp.nu_max > 0.0 ? pp.nu_max * uniform01(rng) : 0.0;
        t.toa = std::uniform_int_distribution<int>(0, std::max(0, pp.D_max))(rng);

        std::vector<int> taps(std::max(1, pp.L_max));
        std::iota(taps.begin(), taps.end(), 0);
        for (int p = 0; p < P; ++p) {
            const int j = std::uniform_int_distribution<int>(p, static_cast<int>(taps.size()) - 1)(rng);
            std::swap(taps[p], taps[j]);
        }
        std::sort(taps.begin(), taps.begin() + P);

        for (int p = 0; p < P; ++p) {
            cplx g;
            if (p == 0) {
                g = std::polar(std::sqrt(los_power), kTwoPi * uniform01(rng));
            } else {
                g = complex_gaussian(rng, diffuse[p]);
            }
            t.paths.push_back({taps[p], g});
        }
        const double cosmax = std::cos(pp.cone_half_angle);
        t.aoa_theta = std::acos(1.0 - uniform01(rng) * (1.0 - cosmax));
        t.aoa_phi = kTwoPi * uniform01(rng);
        pop.push_back(std::move(t));
    }
    return pop;
}

ActivityPattern draw_activity(std::span<const TerminalProfile> population, int K_a, uint64_t seed) {
    const int K = static_cast<int>(population.size());
    if (K_a < 0 || K_a > K) {
        throw ConfigError("K_a", "K_a=" + std::to_string(K_a) + " must lie in [0, K=" + std::to_string(K) + "]");
    }
    std::vector<int> ids(K);
    for (int i = 0; i < K; ++i) ids[i] = population[i].id;
    Rng rng(seed);
    for (int i = 0; i < K_a; ++i) {
        const int j = std::uniform_int_distribution<int>(i, K - 1)(rng);
        std::swap(ids[i], ids[j]);
    }
    ActivityPattern pat{K, std::vector<int>(ids.begin(), ids.begin() + K_a)};
    std::sort(pat.active.begin(), pat.active.end());
    return pat;
}

CVec steering_vector(double theta, double phi, int A) {
    CVec s(A);
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(A))));
    const double st = std::sin(theta);
    if (side * side == A) {
        for (int ax = 0; ax < side; ++ax)
            for (int ay = 0; ay < side; ++ay)
                s[ax * side + ay] = std::polar(1.0, kPi * (ax * st * std::cos(phi) + ay * st * std::sin(phi)));
    } else {
        for (int a = 0; a < A; ++a) s[a] = std::polar(1.0, kPi * a * st * std::cos(phi));
    }
    return s;
}

const TerminalProfile* ChannelRealization::find(int id) const {
    const int i = index_of(id);
    return i < 0 ? nullptr : &terminals[i];
}

int ChannelRealization::index_of(int id) const {
    for (size_t i = 0; i < terminals.size(); ++i)
        if (terminals[i].id == id) return static_cast<int>(i);
    return -1;
}

ChannelRealization make_realization(std::span<const TerminalProfile> population,
                                    const ActivityPattern& activity, int antennas, double snr_db,
                                    double sample_rate) {
    if (antennas < 1) throw ConfigError("A", "A must be >= 1");
    ChannelRealization r;
    r.antennas = antennas;
    r.sample_rate = sample_rate;
    r.noise_var = std::isinf(snr_db) && snr_db > 0 ? 0.0 : std::pow(10.0, -snr_db / 10.0);
    for (int id : activity.active) {
        auto it = std::find_if(population.begin(), population.end(),
                               [id](const TerminalProfile& t) { return t.id == id; });
        if (it == population.end()) throw ConsistencyError("activity references unknown terminal");
        TerminalProfile t = *it;
        t.active = true;
        r.steering.push_back(steering_vector(t.aoa_theta, t.aoa_phi, antennas));
        r.terminals.push_back(std::move(t));
    }
    return r;
}

void accumulate_terminal_response(std::span<const cplx> s, std::span<const Path> paths, int toa,
                                  double doppler, double sample_rate, std::span<cplx> out,
                                  ChannelMode mode) {
    const size_t L = out.size();
    if (s.size() != L) throw DimensionError("accumulate_terminal_response: length mismatch");
    CVec phasor(L);
    const double step = doppler / sample_rate;
    for (size_t t = 0; t < L; ++t) {
        const double cycles = std::fmod(step * static_cast<double>(t), 1.0);
        phasor[t] = std::polar(1.0, kTwoPi * cycles);
    }
    const auto& k = kernels::active();
    for (const Path& p : paths) {
        const size_t d = static_cast<size_t>(toa + p.delay);
        if (d < L) k.cmul_acc(p.gain, phasor.data() + d, s.data(), out.data() + d, L - d);
        if (mode == ChannelMode::cyclic && d > 0) {
            const size_t w = std::min(d, L);
            k.cmul_acc(p.gain, phasor.data(), s.data() + (L - w), out.data(), w);
        }
    }
}

MultiAntennaSignal apply_channel(std::span<const TxSignal> frames, const ChannelRealization& real,
                                 int length, uint64_t noise_seed, ChannelMode mode) {
    MultiAntennaSignal rx(real.antennas, CVec(static_cast<size_t>(length)));
    CVec z(static_cast<size_t>(length));
    for (const TxSignal& f : frames) {
        const int idx = real.index_of(f.terminal);
        if (idx < 0) {
            throw ConsistencyError("apply_channel: terminal " + std::to_string(f.terminal) +
                                   " transmits but is not in the realization");
        }
        if (f.samples.size() != static_cast<size_t>(length)) {
            throw DimensionError("apply_channel: frame length mismatch");
        }
        const TerminalProfile& t = real.terminals[idx];
        std::fill(z.begin(), z.end(), cplx{});
        accumulate_terminal_response(f.samples, t.paths, t.toa, t.doppler, real.sample_rate, z, mode);
        for (int a = 0; a < real.antennas; ++a) kernels::caxpy(real.steering[idx][a], z, rx[a]);
    }
    if (real.noise_var > 0.0) {
        Rng rng(noise_seed);
        for (auto& ant : rx)
            for (auto& v : ant) v += complex_gaussian(rng, real.noise_var);
    }
    return rx;
}

cplx dirichlet(double u, int N) {
    const double r = std::round(u);
    if (std::abs(u - r) < 1e-12) {
        const long long q = static_cast<long long>(r);
        return ((q % N) + N) % N == 0 ? cplx{1.0, 0.0} : cplx{};
    }
    cplx acc{};
    for (int n = 0; n < N; ++n) acc += std::polar(1.0, kTwoPi * n * u / N);
    return acc / static_cast<double>(N);
}

waveform::DDGrid lattice_cir(std::span<const LatticeTap> taps, double doppler,
                             const waveform::OtfsNumerology& num, int M_prime, int N_prime) {
    if (M_prime < num.M || N_prime < num.N) {
        throw DimensionError("lattice_cir: lattice must be at least (M, N)");
    }
    waveform::DDGrid h(M_prime, N_prime);
    double x = doppler * num.N * num.symbol_period();
    if (std::abs(x - std::round(x)) < 1e-9) x = std::round(x);
    CVec kernel(N_prime);
    for (int kp = 0; kp < N_prime; ++kp) {
        kernel[kp] = dirichlet(x - static_cast<double>(kp) * num.N / N_prime, num.N);
    }
    for (const LatticeTap& tap : taps) {
        if (tap.delay < 0 || tap.delay >= M_prime) throw DimensionError("lattice_cir: delay outside lattice");
        for (int kp = 0; kp < N_prime; ++kp) h(tap.delay, kp) += tap.gain * kernel[kp];
    }
    return h;
}

waveform::DDGrid dd_cir_on_lattice(const ChannelRealization& real, int terminal, int antenna,
                                   const waveform::OtfsNumerology& num, int M_prime, int N_prime) {
    const int idx = real.index_of(terminal);
    if (idx < 0) throw ConsistencyError("dd_cir_on_lattice: terminal not active");
    const TerminalProfile& t = real.terminals[idx];
    const cplx steer = real.steering[idx][antenna];
    std::vector<LatticeTap> taps;
    for (const Path& p : t.paths) taps.push_back({t.total_delay(p), p.gain * steer});
    return lattice_cir(taps, t.doppler, num, M_prime, N_prime);
}

}  // namespace gfra::channel
