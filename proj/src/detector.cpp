#include "gfra/detector.hpp"

#include <algorithm>
#include <cmath>

#include "gfra/kernels.hpp"

namespace gfra::mud {

void SparseColumns::multiply_acc(std::span<const cplx> x, cplx alpha, std::span<cplx> y) const {
    for (int c = 0; c < dim; ++c) {
        const cplx xc = alpha * x[c];
        if (xc == cplx{}) continue;
        for (int e = col_ptr[c]; e < col_ptr[c + 1]; ++e) y[row[e]] += val[e] * xc;
    }
}

void SparseColumns::adjoint_acc(std::span<const cplx> y, cplx alpha, std::span<cplx> x) const {
    for (int c = 0; c < dim; ++c) {
        cplx acc{};
        for (int e = col_ptr[c]; e < col_ptr[c + 1]; ++e) acc += std::conj(val[e]) * y[row[e]];
        x[c] += alpha * acc;
    }
}

size_t SparseColumns::max_column_nnz() const {
    size_t best = 0;
    for (int c = 0; c < dim; ++c) best = std::max(best, static_cast<size_t>(col_ptr[c + 1] - col_ptr[c]));
    return best;
}

double SparseColumns::frobenius2() const {
    double s = 0.0;
    for (const cplx& v : val) s += std::norm(v);
    return s;
}

SparseColumns path_operator(int delay, double doppler, const OtfsNumerology& num, double prune) {
    const int M = num.M, N = num.N;
    if (delay < 0 || delay >= M || delay > num.ts_len) {
        throw DimensionError("path_operator: delay " + std::to_string(delay) + " outside the foldable range");
    }
    const waveform::FrameLayout lay(num);
    const double B = num.sample_rate();
    SparseColumns op;
    op.dim = M * N;
    op.col_ptr.reserve(op.dim + 1);
    op.col_ptr.push_back(0);

    // A DD impulse at (l,k) occupies sample l of every block with phase
    // exp(j2pi nk/N)/sqrt(N). The path moves it to window position (l+d) mod M
    // (the tail is folded back) and rotates it by the Doppler phase at the
    // absolute receive time; demodulation then collapses the N samples.
    CVec rot(N), col(N);
    for (int k = 0; k < N; ++k) {
        for (int l = 0; l < M; ++l) {
            for (int n = 0; n < N; ++n) {
                const double t = static_cast<double>(lay.payload_start(n) + l + delay);
                rot[n] = std::polar(1.0 / N, kTwoPi * std::fmod(doppler / B * t, 1.0));
            }
            double peak = 0.0;
            for (int kk = 0; kk < N; ++kk) {
                cplx acc{};
                for (int n = 0; n < N; ++n) {
                    const int e = ((n * (k - kk)) % N + N) % N;
                    acc += rot[n] * std::polar(1.0, kTwoPi * e / N);
                }
                col[kk] = acc;
                peak = std::max(peak, std::abs(acc));
            }
            const int lr = (l + delay) % M;
            for (int kk = 0; kk < N; ++kk) {
                if (std::abs(col[kk]) < prune * peak || col[kk] == cplx{}) continue;
                op.row.push_back(kk * M + lr);
                op.val.push_back(col[kk]);
            }
            op.col_ptr.push_back(static_cast<int>(op.row.size()));
        }
    }
    return op;
}

EffectiveChannel::EffectiveChannel(std::span<const TerminalEstimate> csi, const OtfsNumerology& num, int antennas)
    : antennas_(antennas), dim_(num.M * num.N) {
    if (csi.empty()) throw std::invalid_argument("EffectiveChannel: no terminals in CSI");
    if (antennas < 1) throw DimensionError("EffectiveChannel: antennas must be >= 1");
    for (const auto& te : csi) {
        if (te.gains.size() != te.delays.size()) throw DimensionError("EffectiveChannel: gains/delays mismatch");
        ids_.push_back(te.id);
        std::vector<PathOp> paths;
        for (size_t p = 0; p < te.delays.size(); ++p) {
            if (static_cast<int>(te.gains[p].size()) != antennas) {
                throw DimensionError("EffectiveChannel: gain vector does not match antenna count");
            }
            paths.push_back({path_operator(te.delays[p], te.doppler, num), te.gains[p]});
        }
        ops_.push_back(std::move(paths));
    }
}

size_t EffectiveChannel::max_column_nnz() const {
    size_t best = 0;
    for (const auto& u : ops_) {
        size_t s = 0;
        for (const auto& p : u) s += p.C.max_column_nnz();
        best = std::max(best, s);
    }
    return best * static_cast<size_t>(antennas_);
}

double EffectiveChannel::frobenius2() const {
    // Paths of one user have distinct delays, so they touch disjoint rows of
    // every column and their energies add.
    double s = 0.0;
    for (const auto& u : ops_)
        for (const auto& p : u) {
            double g2 = 0.0;
            for (const cplx& g : p.gain) g2 += std::norm(g);
            s += g2 * p.C.frobenius2();
        }
    return s;
}

void EffectiveChannel::apply(std::span<const cplx> x, std::span<cplx> y) const {
    const size_t D = static_cast<size_t>(dim_);
    if (x.size() != D * ops_.size() || y.size() != D * antennas_) throw DimensionError("EffectiveChannel::apply");
    std::fill(y.begin(), y.end(), cplx{});
    CVec t(D);
    for (size_t u = 0; u < ops_.size(); ++u) {
        const auto xu = x.subspan(u * D, D);
        for (const auto& p : ops_[u]) {
            std::fill(t.begin(), t.end(), cplx{});
            p.C.multiply_acc(xu, 1.0, t);
            for (int a = 0; a < antennas_; ++a) kernels::caxpy(p.gain[a], t, y.subspan(a * D, D));
        }
    }
}

void EffectiveChannel::adjoint(std::span<const cplx> y, std::span<cplx> x) const {
    const size_t D = static_cast<size_t>(dim_);
    if (x.size() != D * ops_.size() || y.size() != D * antennas_) throw DimensionError("EffectiveChannel::adjoint");
    std::fill(x.begin(), x.end(), cplx{});
    CVec t(D);
    for (size_t u = 0; u < ops_.size(); ++u) {
        for (const auto& p : ops_[u]) {
            std::fill(t.begin(), t.end(), cplx{});
            for (int a = 0; a < antennas_; ++a) kernels::caxpy(std::conj(p.gain[a]), y.subspan(a * D, D), t);
            p.C.adjoint_acc(t, 1.0, x.subspan(u * D, D));
        }
    }
}

TerminalEstimate genie_estimate(const channel::ChannelRealization& real, int id) {
    const int idx = real.index_of(id);
    if (idx < 0) throw ConsistencyError("genie_estimate: terminal " + std::to_string(id) + " not active");
    const auto& t = real.terminals[idx];
    TerminalEstimate te;
    te.id = id;
    te.doppler = t.doppler;
    for (const auto& p : t.paths) {
        te.delays.push_back(t.total_delay(p));
        CVec g(real.antennas);
        for (int a = 0; a < real.antennas; ++a) g[a] = p.gain * real.steering[idx][a];
        te.gains.push_back(std::move(g));
    }
    return te;
}

namespace {

cplx dot(std::span<const cplx> a, std::span<const cplx> b) { return kernels::active().cdotc(a.data(), b.data(), a.size()); }

}  // namespace

SolveResult ls_detect(std::span<const cplx> y, const EffectiveChannel& H, const SolverOptions& opts) {
    if (H.users() > H.antennas()) throw IdentifiabilityError(H.users(), H.antennas());
    const size_t nx = static_cast<size_t>(H.users()) * H.grid_size();
    const size_t ny = static_cast<size_t>(H.antennas()) * H.grid_size();
    if (y.size() != ny) throw DimensionError("ls_detect: observation size mismatch");

    SolveResult res;
    res.reg = opts.reg >= 0.0 ? opts.reg : 1e-6 * H.frobenius2() / static_cast<double>(nx);
    res.x.assign(nx, cplx{});

    CVec r(nx), p(nx), q(nx), tmp(ny);
    H.adjoint(y, r);
    const double bnorm = std::sqrt(kernels::cnorm2(r));
    if (bnorm == 0.0) {
        res.converged = true;
        return res;
    }
    p = r;
    double rs = kernels::cnorm2(r);
    for (int it = 0; it < opts.max_iters; ++it) {
        H.apply(p, tmp);
        H.adjoint(tmp, q);
        kernels::caxpy(res.reg, p, q);
        const double pq = std::real(dot(p, q));
        if (!(pq > 0.0)) break;
        const double alpha = rs / pq;
        kernels::caxpy(alpha, p, res.x);
        kernels::caxpy(-alpha, q, r);
        const double rs_new = kernels::cnorm2(r);
        res.iterations = it + 1;
        res.relative_residual = std::sqrt(rs_new) / bnorm;
        if (res.relative_residual < opts.tol) {
            res.converged = true;
            break;
        }
        const double beta = rs_new / rs;
        for (size_t i = 0; i < nx; ++i) p[i] = r[i] + beta * p[i];
        rs = rs_new;
    }
    return res;
}

std::vector<uint8_t> demap(std::span<const cplx> soft, const waveform::Constellation& c) {
    const int b = c.bits_per_symbol();
    std::vector<uint8_t> bits;
    bits.reserve(soft.size() * b);
    for (const cplx& v : soft) {
        const int label = c.nearest(v);
        for (int i = b - 1; i >= 0; --i) bits.push_back(static_cast<uint8_t>((label >> i) & 1));
    }
    return bits;
}

channel::MultiAntennaSignal reconstruct_ts_contribution(std::span<const TerminalEstimate> csi,
                                                        std::span<const waveform::TrainingSequence> ts_by_terminal,
                                                        const OtfsNumerology& num, int antennas) {
    const waveform::FrameLayout lay(num);
    const int len = lay.length();
    channel::MultiAntennaSignal out(antennas, CVec(len));
    const waveform::TimeBlocks zero{num.M, num.N, CVec(static_cast<size_t>(num.M) * num.N)};
    std::vector<channel::Path> paths;
    for (const auto& te : csi) {
        const auto frame = waveform::assemble_frame(zero, ts_by_terminal[te.id].samples);
        for (int a = 0; a < antennas; ++a) {
            paths.clear();
            for (size_t p = 0; p < te.delays.size(); ++p) paths.push_back({te.delays[p], te.gains[p][a]});
            channel::accumulate_terminal_response(frame.samples, paths, 0, te.doppler, num.sample_rate(), out[a]);
        }
    }
    return out;
}

CVec payload_observation(const channel::MultiAntennaSignal& received, const channel::MultiAntennaSignal& ts_part,
                         const OtfsNumerology& num, int overlap) {
    const waveform::FrameLayout lay(num);
    if (overlap < 0 || overlap > num.ts_len || overlap > num.M) {
        throw DimensionError("payload_observation: overlap must lie in [0, min(M, M_t)]");
    }
    if (ts_part.size() != received.size()) throw DimensionError("payload_observation: antenna count mismatch");
    const size_t D = static_cast<size_t>(num.M) * num.N;
    CVec out;
    out.reserve(D * received.size());
    for (size_t a = 0; a < received.size(); ++a) {
        const CVec& r = received[a];
        const CVec& s = ts_part[a];
        if (r.size() < static_cast<size_t>(lay.length()) || s.size() < static_cast<size_t>(lay.length())) {
            throw DimensionError("payload_observation: signal shorter than frame");
        }
        waveform::TimeBlocks blocks{num.M, num.N, CVec(D)};
        for (int n = 0; n < num.N; ++n) {
            const int ps = lay.payload_start(n);
            auto w = blocks.block(n);
            for (int i = 0; i < num.M; ++i) w[i] = r[ps + i] - s[ps + i];
            for (int i = 0; i < overlap; ++i) w[i] += r[ps + num.M + i] - s[ps + num.M + i];
        }
        const auto dd = waveform::otfs_demodulate(blocks);
        out.insert(out.end(), dd.values().begin(), dd.values().end());
    }
    return out;
}

DetectionReport compute_ber(std::span<const TerminalBits> detected, std::span<const TerminalBits> truth) {
    DetectionReport rep;
    double errors = 0.0, total = 0.0;
    for (const auto& t : truth) {
        rep.ids.push_back(t.id);
        const auto it = std::find_if(detected.begin(), detected.end(), [&](const TerminalBits& d) { return d.id == t.id; });
        const double nbits = static_cast<double>(t.bits.size());
        double ber = 0.5;
        if (it == detected.end()) {
            rep.missed.push_back(1);
        } else {
            if (it->bits.size() != t.bits.size()) throw DimensionError("compute_ber: bit vectors not aligned");
            size_t e = 0;
            for (size_t i = 0; i < t.bits.size(); ++i) e += (it->bits[i] != t.bits[i]);
            ber = nbits > 0 ? static_cast<double>(e) / nbits : 0.0;
            rep.missed.push_back(0);
        }
        rep.ber.push_back(ber);
        errors += ber * nbits;
        total += nbits;
    }
    rep.aggregate = total > 0 ? errors / total : 0.0;
    return rep;
}

}  // namespace gfra::mud
