#include "gfra/receiver.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <numeric>

#include "gfra/fft.hpp"
#include "gfra/kernels.hpp"
#include "gfra/rng.hpp"

namespace gfra::rx {
namespace {

using EMat = Eigen::MatrixXcd;
using EMap = Eigen::Map<const Eigen::MatrixXcd>;

bool log_enabled() {
    static const bool on = std::getenv("GFRA_LOG") != nullptr;
    return on;
}

EMap as_eigen(const CMatrix& m) { return EMap(m.data.data(), m.rows, m.cols); }

}  // namespace

NonIsiObservation extract_non_isi(const MultiAntennaSignal& received, const OtfsNumerology& num,
                                  const DelayWindow& win) {
    const int G = win.non_isi_length(num.ts_len);
    if (G <= 0) {
        throw ConfigError("ts_len", "non-ISI window is empty: M_t=" + std::to_string(num.ts_len) +
                                        " <= L_max + D_max=" + std::to_string(win.taps()));
    }
    const waveform::FrameLayout lay(num);
    NonIsiObservation obs;
    obs.snapshots = num.N + 1;
    obs.antennas = static_cast<int>(received.size());
    obs.Y = CMatrix(G, obs.snapshots * obs.antennas);
    for (int i = 0; i < obs.snapshots; ++i) obs.timestamps.push_back(lay.ts_start(i) + win.taps());
    for (int a = 0; a < obs.antennas; ++a) {
        if (received[a].size() < static_cast<size_t>(lay.length())) {
            throw DimensionError("extract_non_isi: received signal shorter than frame");
        }
        for (int i = 0; i < obs.snapshots; ++i) {
            const cplx* src = received[a].data() + obs.timestamps[i];
            std::copy(src, src + G, obs.Y.col(obs.column(a, i)));
        }
    }
    return obs;
}

MmvDictionary build_dictionary(std::span<const waveform::TrainingSequence> ts, int ts_len,
                               const DelayWindow& win, std::span<const double> ramps) {
    const int L = win.taps();
    const int G = win.non_isi_length(ts_len);
    if (G <= 0) throw ConfigError("ts_len", "non-ISI window is empty");
    MmvDictionary d;
    d.L = L;
    d.ramps.assign(ramps.begin(), ramps.end());
    if (d.ramps.empty()) d.ramps.push_back(0.0);
    const int H = d.hypotheses();
    d.atoms = CMatrix(G, static_cast<int>(ts.size()) * d.width());
    d.scale.resize(static_cast<size_t>(d.atoms.cols));
    CVec rot(G);
    for (size_t k = 0; k < ts.size(); ++k) {
        if (static_cast<int>(ts[k].samples.size()) != ts_len) {
            throw DimensionError("build_dictionary: training sequence length mismatch");
        }
        d.terminals.push_back(ts[k].terminal);
        for (int h = 0; h < H; ++h) {
            for (int j = 0; j < G; ++j) rot[j] = std::polar(1.0, kTwoPi * std::fmod(d.ramps[h] * j, 1.0));
            for (int delay = 0; delay < L; ++delay) {
                const int atom = static_cast<int>(k) * d.width() + h * L + delay;
                cplx* col = d.atoms.col(atom);
                for (int j = 0; j < G; ++j) col[j] = ts[k].samples[L + j - delay] * rot[j];
                const double nrm = std::sqrt(kernels::cnorm2({col, static_cast<size_t>(G)}));
                d.scale[atom] = nrm;
                for (int j = 0; j < G; ++j) col[j] /= nrm;
            }
        }
    }
    return d;
}

std::vector<double> doppler_ramps(double nu_max, double sample_rate, int count) {
    if (count < 1) throw ConfigError("doppler_hypotheses", "need at least one hypothesis");
    std::vector<double> r;
    for (int h = 0; h < count; ++h) r.push_back((h + 0.5) * nu_max / count / sample_rate);
    return r;
}

double max_cross_coherence(const MmvDictionary& dict) {
    const auto& k = kernels::active();
    const int n = dict.atoms.cols;
    const size_t G = static_cast<size_t>(dict.atoms.rows);
    double best = 0.0;
    for (int i = 0; i < n; ++i) {
        const int bi = dict.block_of(i);
        for (int j = (bi + 1) * dict.width(); j < n; ++j) {
            best = std::max(best, std::abs(k.cdotc(dict.atoms.col(i), dict.atoms.col(j), G)));
        }
    }
    return best;
}

cplx SparseCirSnapshots::entry(int atom, int column) const {
    for (size_t s = 0; s < support.size(); ++s)
        if (support[s] == atom) return taps(static_cast<int>(s), column);
    return {};
}

SparseCirSnapshots somp_recover(const CMatrix& Y, const MmvDictionary& dict, const SompStop& stop) {
    if (Y.rows != dict.atoms.rows) {
        throw DimensionError("somp_recover: observation rows " + std::to_string(Y.rows) +
                             " != dictionary rows " + std::to_string(dict.atoms.rows));
    }
    const auto& k = kernels::active();
    const int G = Y.rows, C = Y.cols, n_atoms = dict.atoms.cols;
    const size_t Gs = static_cast<size_t>(G);

    SparseCirSnapshots out;
    out.atoms = n_atoms;
    out.columns = C;
    out.dof_rows = G;
    out.observed_energy = k.cnorm2(Y.data.data(), Y.data.size());

    CMatrix R = Y;
    double residual = out.observed_energy;
    const double target = std::max(stop.threshold * out.observed_energy, stop.absolute);
    const int max_taps = std::min(stop.max_taps, G);
    std::vector<char> chosen(n_atoms, 0);
    EMat X;
    const EMap Psi = as_eigen(dict.atoms);

    while (static_cast<int>(out.support.size()) < max_taps && residual > target) {
        // ||R^H a||^2 = a^H (R R^H) a, so one G x G Gram matrix replaces the
        // per-column correlations.
        const Eigen::Map<const EMat> Re(R.data.data(), G, C);
        const EMat Q = Re * Re.adjoint();
        const EMat P = Q * Psi;
        int best = -1;
        double best_score = 0.0;
        for (int j = 0; j < n_atoms; ++j) {
            if (chosen[j]) continue;
            const double score = std::real(k.cdotc(dict.atoms.col(j), P.col(j).data(), Gs));
            if (score > best_score) {
                best_score = score;
                best = j;
            }
        }
        if (best < 0) break;

        std::vector<int> trial = out.support;
        trial.push_back(best);
        EMat A(G, static_cast<int>(trial.size()));
        for (size_t s = 0; s < trial.size(); ++s)
            A.col(static_cast<int>(s)) = Eigen::Map<const Eigen::VectorXcd>(dict.atoms.col(trial[s]), G);
        const EMap Ye = as_eigen(Y);
        EMat Xt = A.householderQr().solve(Ye);
        EMat Rt = Ye - A * Xt;
        const double new_res = Rt.squaredNorm();
        if (!(new_res < residual)) break;

        chosen[best] = 1;
        out.support = std::move(trial);
        X = std::move(Xt);
        std::copy(Rt.data(), Rt.data() + Rt.size(), R.data.begin());
        residual = new_res;
        out.residual_history.push_back(residual);
    }

    out.residual_energy = residual;
    out.taps = CMatrix(static_cast<int>(out.support.size()), C);
    for (size_t s = 0; s < out.support.size(); ++s) {
        const double sc = dict.scale[out.support[s]];
        for (int c = 0; c < C; ++c) out.taps(static_cast<int>(s), c) = X(static_cast<int>(s), c) / sc;
    }
    return out;
}

double estimate_noise_floor(const SparseCirSnapshots& snap, const MmvDictionary& dict) {
    const double rows = snap.dof_rows;
    double dof = (rows - static_cast<double>(snap.support.size())) * snap.columns;
    if (dof <= 0.0) dof = rows * snap.columns;
    const double per_sample = snap.residual_energy / dof;
    double mean_scale2 = 0.0;
    for (double sc : dict.scale) mean_scale2 += sc * sc;
    mean_scale2 /= static_cast<double>(dict.scale.size());
    return per_sample / mean_scale2;
}

std::vector<int> cg_ad(const SparseCirSnapshots& snap, const MmvDictionary& dict, double noise_floor,
                       double tau) {
    std::vector<double> energy(dict.blocks(), 0.0);
    for (size_t s = 0; s < snap.support.size(); ++s) {
        const int b = dict.block_of(snap.support[s]);
        for (int c = 0; c < snap.columns; ++c) energy[b] += std::norm(snap.taps(static_cast<int>(s), c));
    }
    std::vector<int> ats;
    for (int b = 0; b < dict.blocks(); ++b) {
        const double mean = snap.columns > 0 ? energy[b] / snap.columns : 0.0;
        if (mean > 0.0 && mean > tau * noise_floor) ats.push_back(dict.terminals[b]);
    }
    std::sort(ats.begin(), ats.end());
    return ats;
}

double estimate_tone_frequency(std::span<const CVec> sequences, const DopplerOptions& opts) {
    if (sequences.empty() || sequences.front().size() < 2) {
        throw std::invalid_argument("estimate_tone_frequency: need at least 2 snapshots");
    }
    const int n = static_cast<int>(sequences.front().size());
    const int F = std::max(1, opts.pad_factor) * n;

    std::vector<double> P(F, 0.0);
    CVec padded(F);
    for (const CVec& z : sequences) {
        std::fill(padded.begin(), padded.end(), cplx{});
        std::copy(z.begin(), z.end(), padded.begin());
        dsp::fft(padded, dsp::Direction::forward);
        for (int f = 0; f < F; ++f) P[f] += std::norm(padded[f]);
    }
    const int p = static_cast<int>(std::max_element(P.begin(), P.end()) - P.begin());
    const double pm = P[(p - 1 + F) % F], p0 = P[p], pp = P[(p + 1) % F];
    const double den = pm - 2.0 * p0 + pp;
    double delta = den < 0.0 ? 0.5 * (pm - pp) / den : 0.0;
    delta = std::clamp(delta, -0.5, 0.5);
    double f = (p + delta) / F;

    // Newton refinement on the summed periodogram.
    for (int step = 0; step < opts.newton_steps; ++step) {
        double d1 = 0.0, d2 = 0.0;
        for (const CVec& z : sequences) {
            cplx S{}, S1{}, S2{};
            for (int i = 0; i < n; ++i) {
                const cplx e = z[i] * std::polar(1.0, -kTwoPi * f * i);
                const double w = kTwoPi * i;
                S += e;
                S1 += cplx(0.0, -w) * e;
                S2 += -w * w * e;
            }
            d1 += 2.0 * std::real(std::conj(S) * S1);
            d2 += 2.0 * (std::norm(S1) + std::real(std::conj(S) * S2));
        }
        if (!(d2 < 0.0)) break;
        const double stepf = std::clamp(-d1 / d2, -1.0 / F, 1.0 / F);
        f += stepf;
    }
    f -= std::floor(f);
    return f;
}

double tone_to_doppler(double cycles, const OtfsNumerology& num, double nu_max) {
    const double span = num.snapshot_doppler_span();
    const double lo = -0.5 * (span - nu_max);
    double nu = cycles * span;
    while (nu >= lo + span) nu -= span;
    while (nu < lo) nu += span;
    return nu;
}

double estimate_doppler(const SparseCirSnapshots& snap, const MmvDictionary& dict, int terminal,
                        const NonIsiObservation& obs, const OtfsNumerology& num, double nu_max,
                        const DopplerOptions& opts) {
    if (obs.snapshots < 2) throw std::invalid_argument("estimate_doppler: need at least 2 snapshots");
    int best = -1;
    double best_e = -1.0;
    for (size_t s = 0; s < snap.support.size(); ++s) {
        if (dict.terminals[dict.block_of(snap.support[s])] != terminal) continue;
        double e = 0.0;
        for (int c = 0; c < snap.columns; ++c) e += std::norm(snap.taps(static_cast<int>(s), c));
        if (e > best_e) {
            best_e = e;
            best = static_cast<int>(s);
        }
    }
    if (best < 0) throw std::invalid_argument("estimate_doppler: terminal has no recovered taps");
    std::vector<CVec> seqs(obs.antennas, CVec(obs.snapshots));
    for (int a = 0; a < obs.antennas; ++a)
        for (int i = 0; i < obs.snapshots; ++i) seqs[a][i] = snap.taps(best, obs.column(a, i));
    return tone_to_doppler(estimate_tone_frequency(seqs, opts), num, nu_max);
}

DDGrid TerminalEstimate::lattice(int antenna, const OtfsNumerology& num, int M_prime, int N_prime) const {
    std::vector<channel::LatticeTap> taps;
    for (size_t t = 0; t < delays.size(); ++t) taps.push_back({delays[t], gains[t][antenna]});
    return channel::lattice_cir(taps, doppler, num, M_prime, N_prime);
}

namespace {

// TS-section response of one (terminal, delay) tap over the stacked snapshot
// windows, row i*G + j.
void tap_response(const NonIsiObservation& obs, double doppler, std::span<const cplx> ts, int delay, int L,
                  double B, cplx* out) {
    const int G = obs.Y.rows;
    for (int i = 0; i < obs.snapshots; ++i) {
        for (int j = 0; j < G; ++j) {
            const double cyc = std::fmod(doppler * (obs.timestamps[i] + j) / B, 1.0);
            out[i * G + j] = std::polar(1.0, kTwoPi * cyc) * ts[L + j - delay];
        }
    }
}

EMat stacked_observation(const NonIsiObservation& obs) {
    const int G = obs.Y.rows;
    EMat Yst(G * obs.snapshots, obs.antennas);
    for (int a = 0; a < obs.antennas; ++a)
        for (int i = 0; i < obs.snapshots; ++i)
            for (int j = 0; j < G; ++j) Yst(i * G + j, a) = obs.Y(j, obs.column(a, i));
    return Yst;
}

}  // namespace

int refine_delay_support(const NonIsiObservation& obs, std::span<TerminalEstimate> terminals,
                         std::span<const waveform::TrainingSequence> ts_by_terminal,
                         const OtfsNumerology& num, const DelayWindow& win, double significance,
                         double min_noise_var) {
    if (terminals.empty() || significance <= 0.0) return 0;
    const int L = win.taps();
    const int rows = obs.Y.rows * obs.snapshots;
    const int A = obs.antennas;
    const double B = num.sample_rate();
    const EMat Yst = stacked_observation(obs);

    struct Cand {
        int term;
        int delay;
        bool in;
    };
    std::vector<Cand> cands;
    EMat basis(rows, static_cast<int>(terminals.size()) * L);
    for (int t = 0; t < static_cast<int>(terminals.size()); ++t) {
        const auto& te = terminals[t];
        for (int d = 0; d < L; ++d) {
            const bool in = std::find(te.delays.begin(), te.delays.end(), d) != te.delays.end();
            tap_response(obs, te.doppler, ts_by_terminal[te.id].samples, d, L, B,
                         basis.col(static_cast<int>(cands.size())).data());
            cands.push_back({t, d, in});
        }
    }
    const Eigen::VectorXd col_norm2 = basis.colwise().squaredNorm().transpose();

    auto residual_of = [&](EMat& R) {
        std::vector<int> sel;
        for (int c = 0; c < static_cast<int>(cands.size()); ++c)
            if (cands[c].in) sel.push_back(c);
        if (sel.empty()) {
            R = Yst;
            return;
        }
        EMat Bs(rows, static_cast<int>(sel.size()));
        for (size_t s = 0; s < sel.size(); ++s) Bs.col(static_cast<int>(s)) = basis.col(sel[s]);
        R = Yst - Bs * Bs.colPivHouseholderQr().solve(Yst);
    };

    int added = 0;
    EMat R;
    residual_of(R);
    const int max_total = rows / 2;
    for (;;) {
        int in_count = 0;
        for (const auto& c : cands) in_count += c.in;
        if (in_count >= max_total) break;
        const double sigma2 =
            std::max(R.squaredNorm() / (static_cast<double>(rows - in_count) * A), min_noise_var);
        const EMat corr = basis.adjoint() * R;  // candidates x A
        int best = -1;
        double best_score = 0.0;
        for (int c = 0; c < static_cast<int>(cands.size()); ++c) {
            if (cands[c].in) continue;
            const double score = corr.row(c).squaredNorm() / col_norm2(c);
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        if (best < 0 || best_score <= significance * A * sigma2) break;
        cands[best].in = true;
        ++added;
        residual_of(R);
    }
    for (auto& te : terminals) te.delays.clear();
    for (const auto& c : cands)
        if (c.in) terminals[c.term].delays.push_back(c.delay);
    return added;
}

LsFitReport ls_fit_gains(const NonIsiObservation& obs, std::span<TerminalEstimate> terminals,
                         std::span<const waveform::TrainingSequence> ts_by_terminal,
                         const OtfsNumerology& num, const DelayWindow& win, double min_noise_var) {
    const int G = obs.Y.rows;
    const int S = obs.snapshots;
    const int rows = G * S;
    const int L = win.taps();
    const double B = num.sample_rate();

    const EMat Yst = stacked_observation(obs);

    LsFitReport report;
    struct Col {
        int term;
        int delay;
    };
    for (;;) {
        std::vector<Col> cols;
        for (int t = 0; t < static_cast<int>(terminals.size()); ++t)
            for (int d : terminals[t].delays) cols.push_back({t, d});
        for (auto& te : terminals) te.gains.assign(te.delays.size(), CVec(obs.antennas));
        if (cols.empty()) {
            report.activity.assign(terminals.size(), 0.0);
            return report;
        }

        EMat Bm(rows, static_cast<int>(cols.size()));
        for (size_t c = 0; c < cols.size(); ++c) {
            const TerminalEstimate& te = terminals[cols[c].term];
            tap_response(obs, te.doppler, ts_by_terminal[te.id].samples, cols[c].delay, L, B,
                         Bm.col(static_cast<int>(c)).data());
        }
        Eigen::ColPivHouseholderQR<EMat> qr(Bm);
        const EMat X = qr.solve(Yst);
        if (qr.rank() < static_cast<int>(cols.size())) {
            int weakest = 0;
            double we = std::numeric_limits<double>::infinity();
            for (int c = 0; c < static_cast<int>(cols.size()); ++c) {
                const double e = X.row(c).squaredNorm();
                if (e < we) {
                    we = e;
                    weakest = c;
                }
            }
            auto& te = terminals[cols[weakest].term];
            report.dropped.emplace_back(te.id, cols[weakest].delay);
            te.delays.erase(std::find(te.delays.begin(), te.delays.end(), cols[weakest].delay));
            if (log_enabled()) {
                std::fprintf(stderr, "ls_fit_gains: rank deficient, dropped terminal %d delay %d\n", te.id,
                             cols[weakest].delay);
            }
            continue;
        }
        const auto diag = qr.matrixQR().diagonal().cwiseAbs();
        report.condition = diag.minCoeff() > 0.0 ? diag.maxCoeff() / diag.minCoeff() : INFINITY;
        if (log_enabled()) std::fprintf(stderr, "ls_fit_gains: %zu taps, R-diagonal ratio %.3g\n", cols.size(), report.condition);
        std::vector<int> next(terminals.size(), 0);
        for (size_t c = 0; c < cols.size(); ++c) {
            auto& te = terminals[cols[c].term];
            const int slot = next[cols[c].term]++;
            for (int a = 0; a < obs.antennas; ++a) te.gains[slot][a] = X(static_cast<int>(c), a);
        }

        const int ncols = static_cast<int>(cols.size());
        const double dof = static_cast<double>(std::max(1, rows - ncols)) * obs.antennas;
        report.residual_power = (Yst - Bm * X).squaredNorm() / dof;
        const double sigma2 = std::max(report.residual_power, min_noise_var);
        const Eigen::VectorXd inv_diag =
            (Bm.adjoint() * Bm).ldlt().solve(EMat::Identity(ncols, ncols)).diagonal().real();
        std::vector<double> sig(terminals.size(), 0.0), noise(terminals.size(), 0.0);
        for (int c = 0; c < ncols; ++c) {
            sig[cols[c].term] += X.row(c).squaredNorm();
            noise[cols[c].term] += obs.antennas * sigma2 * inv_diag(c);
        }
        report.activity.assign(terminals.size(), 0.0);
        for (size_t t = 0; t < terminals.size(); ++t)
            report.activity[t] = noise[t] > 0.0 ? sig[t] / noise[t] : (sig[t] > 0.0 ? INFINITY : 0.0);
        return report;
    }
}

const TerminalEstimate* EstimationResult::find(int id) const {
    for (const auto& t : terminals)
        if (t.id == id) return &t;
    return nullptr;
}

EstimationResult estimate_ts_otfs(const MultiAntennaSignal& received, const OtfsNumerology& num,
                                  const MmvDictionary& dict,
                                  std::span<const waveform::TrainingSequence> ts_by_terminal,
                                  const ReceiverOptions& opts) {
    const NonIsiObservation obs = extract_non_isi(received, num, opts.window);
    const int G = obs.Y.rows;
    SompStop stop;
    stop.absolute = opts.stop_factor * G * obs.Y.cols * opts.noise_var;
    stop.max_taps = std::min(opts.somp_max_taps, G - 1);

    EstimationResult res;
    res.snapshots = somp_recover(obs.Y, dict, stop);
    res.noise_floor = estimate_noise_floor(res.snapshots, dict);
    res.candidates = cg_ad(res.snapshots, dict, res.noise_floor, opts.cgad_tau);
    // Significance tests below never assume less noise than the nominal level,
    // nor less than double-precision leftovers of a noiseless frame.
    const double min_noise_var =
        std::max(opts.noise_var, 1e-10 * res.snapshots.observed_energy / (static_cast<double>(G) * obs.Y.cols));

    for (int id : res.candidates) {
        TerminalEstimate te;
        te.id = id;
        for (int atom : res.snapshots.support)
            if (dict.terminals[dict.block_of(atom)] == id) te.delays.push_back(dict.delay_of(atom));
        std::sort(te.delays.begin(), te.delays.end());
        te.delays.erase(std::unique(te.delays.begin(), te.delays.end()), te.delays.end());
        te.doppler = estimate_doppler(res.snapshots, dict, id, obs, num, opts.nu_max, opts.doppler);
        res.terminals.push_back(std::move(te));
    }
    refine_delay_support(obs, res.terminals, ts_by_terminal, num, opts.window, opts.support_significance,
                         min_noise_var);

    // Confirm each candidate on the Doppler-compensated fit, where the
    // short-window model error is gone, and refit without the rejected ones.
    for (;;) {
        res.fit = ls_fit_gains(obs, res.terminals, ts_by_terminal, num, opts.window, min_noise_var);
        std::vector<TerminalEstimate> kept;
        for (size_t t = 0; t < res.terminals.size(); ++t)
            if (res.fit.activity[t] > opts.confirm_tau) kept.push_back(res.terminals[t]);
        if (kept.size() == res.terminals.size()) break;
        res.terminals = std::move(kept);
        if (res.terminals.empty()) {
            res.fit = LsFitReport{};
            break;
        }
    }
    for (const auto& te : res.terminals) res.ats.push_back(te.id);
    return res;
}

// ---------------------------------------------------------------------------

DdPilotParams dd_pilot_params_for(const OtfsNumerology& num, const DelayWindow& win) {
    DdPilotParams p;
    p.M_d = num.M + num.ts_len;
    p.N = num.N;
    p.cp_len = num.ts_len;
    p.guard_delay = win.taps() - 1;
    p.amplitude = std::sqrt(static_cast<double>((num.N + 1) * num.ts_len));
    return p;
}

CVec dd_pilot_frame(const DdPilotParams& p) {
    DDGrid g(p.M_d, p.N);
    g(0, 0) = p.amplitude;
    const auto blocks = waveform::otfs_modulate(g);
    CVec out(static_cast<size_t>(p.frame_length()));
    std::copy(blocks.samples.end() - p.cp_len, blocks.samples.end(), out.begin());
    std::copy(blocks.samples.begin(), blocks.samples.end(), out.begin() + p.cp_len);
    return out;
}

DDGrid dd_pilot_baseline_ce(std::span<const cplx> received, const DdPilotParams& p, double noise_var,
                            const OtfsNumerology& num, const DelayWindow& win) {
    const int memory = win.taps() - 1;
    if (p.guard_delay < memory || p.guard_delay >= p.M_d || p.cp_len < memory) {
        throw ConfigError("guard_delay", "DD pilot guard region cannot hold channel memory " +
                                             std::to_string(memory));
    }
    if (p.guard_delay >= num.M || p.N != num.N) throw DimensionError("dd_pilot_baseline_ce: lattice mismatch");
    if (received.size() < static_cast<size_t>(p.frame_length())) {
        throw DimensionError("dd_pilot_baseline_ce: received signal shorter than frame");
    }
    waveform::TimeBlocks blocks{p.M_d, p.N, CVec(received.begin() + p.cp_len, received.begin() + p.frame_length())};
    const DDGrid Y = waveform::otfs_demodulate(blocks);

    const double thr = std::max(p.threshold_sigma * std::sqrt(noise_var), 1e-9 * p.amplitude);
    std::vector<double> col_energy(p.N, 0.0);
    for (int d = 0; d <= p.guard_delay; ++d)
        for (int k = 0; k < p.N; ++k) col_energy[k] += std::norm(Y(d, k));
    const int k_peak = static_cast<int>(std::max_element(col_energy.begin(), col_energy.end()) - col_energy.begin());
    const double nu_coarse = tone_to_doppler(static_cast<double>(k_peak) / p.N, num, num.snapshot_doppler_span());
    const double B = num.sample_rate();

    DDGrid h(num.M, num.N);
    for (int d = 0; d <= p.guard_delay; ++d) {
        const cplx derot = std::polar(1.0, -kTwoPi * std::fmod(nu_coarse * (p.cp_len + d) / B, 1.0));
        for (int k = 0; k < p.N; ++k) {
            const cplx v = Y(d, k);
            if (std::abs(v) > thr) h(d, k) = v / p.amplitude * derot;
        }
    }
    return h;
}

// ---------------------------------------------------------------------------

CVec make_ofdm_pilots(uint64_t seed, int terminal, int count) {
    Rng rng(split_seed(seed ^ 0x0fd3a11c0ffee5ULL, static_cast<uint64_t>(terminal)));
    CVec out(count);
    const double s = 1.0 / std::sqrt(2.0);
    std::uniform_int_distribution<int> bit(0, 1);
    for (auto& v : out) {
        const int b0 = bit(rng), b1 = bit(rng);
        v = {b0 ? -s : s, b1 ? -s : s};
    }
    return out;
}

MmvDictionary build_ofdm_dictionary(std::span<const CVec> pilots, const waveform::OfdmParams& p,
                                    const DelayWindow& win) {
    const auto pil = p.pilot_subcarriers();
    const int L = win.taps();
    if (p.M / p.pilot_spacing < L) {
        throw ConfigError("ofdm_pilot_spacing", "pilot comb too sparse for the delay window");
    }
    MmvDictionary d;
    d.L = L;
    const int rows = static_cast<int>(pil.size());
    d.atoms = CMatrix(rows, static_cast<int>(pilots.size()) * L);
    d.scale.resize(static_cast<size_t>(pilots.size()) * L);
    for (size_t k = 0; k < pilots.size(); ++k) {
        d.terminals.push_back(static_cast<int>(k));
        for (int delay = 0; delay < L; ++delay) {
            const int atom = static_cast<int>(k) * L + delay;
            cplx* col = d.atoms.col(atom);
            for (int i = 0; i < rows; ++i) {
                const double cyc = std::fmod(static_cast<double>(pil[i]) * delay / p.M, 1.0);
                col[i] = pilots[k][i] * std::polar(1.0, -kTwoPi * cyc);
            }
            const double nrm = std::sqrt(kernels::cnorm2({col, static_cast<size_t>(rows)}));
            d.scale[atom] = nrm;
            for (int i = 0; i < rows; ++i) col[i] /= nrm;
        }
    }
    return d;
}

int OfdmEstimate::index_of(int id) const {
    for (size_t i = 0; i < ids.size(); ++i)
        if (ids[i] == id) return static_cast<int>(i);
    return -1;
}

OfdmEstimate ofdm_baseline_receiver(const MultiAntennaSignal& received, const waveform::OfdmParams& p,
                                    const MmvDictionary& dict, const ReceiverOptions& opts) {
    const auto pil = p.pilot_subcarriers();
    const int A = static_cast<int>(received.size());
    const int Np = static_cast<int>(pil.size());
    std::vector<waveform::TFGrid> tf;
    for (const auto& r : received) tf.push_back(waveform::ofdm_demodulate(r, p));

    CMatrix Y(Np, A * p.symbols);
    for (int a = 0; a < A; ++a)
        for (int n = 0; n < p.symbols; ++n)
            for (int i = 0; i < Np; ++i) Y(i, a * p.symbols + n) = tf[a](n, pil[i]);

    SompStop stop;
    stop.absolute = opts.stop_factor * Np * Y.cols * opts.noise_var;
    stop.max_taps = std::min(opts.somp_max_taps, Np - 1);

    OfdmEstimate est;
    est.snapshots = somp_recover(Y, dict, stop);
    est.noise_floor = estimate_noise_floor(est.snapshots, dict);
    est.ats = cg_ad(est.snapshots, dict, est.noise_floor, opts.cgad_tau);

    for (int id : est.ats) {
        est.ids.push_back(id);
        std::vector<waveform::TFGrid> per_ant(A, waveform::TFGrid(p.symbols, p.M));
        for (size_t s = 0; s < est.snapshots.support.size(); ++s) {
            const int atom = est.snapshots.support[s];
            if (dict.terminals[dict.block_of(atom)] != id) continue;
            const int delay = dict.delay_of(atom);
            CVec ramp(p.M);
            for (int m = 0; m < p.M; ++m)
                ramp[m] = std::polar(1.0, -kTwoPi * std::fmod(static_cast<double>(m) * delay / p.M, 1.0));
            for (int a = 0; a < A; ++a)
                for (int n = 0; n < p.symbols; ++n)
                    kernels::caxpy(est.snapshots.taps(static_cast<int>(s), a * p.symbols + n), ramp,
                                   per_ant[a].symbol(n));
        }
        est.channel.push_back(std::move(per_ant));
    }
    return est;
}

}  // namespace gfra::rx
