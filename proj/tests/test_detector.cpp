#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "gfra/channel.hpp"
#include "gfra/detector.hpp"
#include "gfra/rng.hpp"
#include "gfra/waveform.hpp"

using namespace gfra;
using namespace gfra::mud;
using waveform::OtfsNumerology;

namespace {

OtfsNumerology small_num(int M, int N, int ts_len) {
    OtfsNumerology num;
    num.M = M;
    num.N = N;
    num.ts_len = ts_len;
    return num;
}

TerminalEstimate make_csi(int id, std::vector<int> delays, double doppler, std::vector<CVec> gains) {
    TerminalEstimate t;
    t.id = id;
    t.delays = std::move(delays);
    t.doppler = doppler;
    t.gains = std::move(gains);
    return t;
}

CVec random_vec(Rng& rng, size_t n) {
    CVec v(n);
    for (auto& z : v) z = complex_gaussian(rng);
    return v;
}

cplx inner(const CVec& a, const CVec& b) {
    cplx s{};
    for (size_t i = 0; i < a.size(); ++i) s += std::conj(a[i]) * b[i];
    return s;
}

double rel_err(const CVec& a, const CVec& b) {
    double e = 0.0, r = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        e += std::norm(a[i] - b[i]);
        r += std::norm(b[i]);
    }
    return std::sqrt(e / r);
}

Eigen::MatrixXcd dense(const EffectiveChannel& H) {
    const int n = H.users() * H.grid_size();
    const int m = H.antennas() * H.grid_size();
    Eigen::MatrixXcd D(m, n);
    CVec e(n), y(m);
    for (int j = 0; j < n; ++j) {
        std::fill(e.begin(), e.end(), 0.0);
        e[j] = 1.0;
        H.apply(e, y);
        for (int i = 0; i < m; ++i) D(i, j) = y[i];
    }
    return D;
}

std::vector<TerminalEstimate> random_csi(Rng& rng, int users, int antennas, const OtfsNumerology& num, int L) {
    std::vector<TerminalEstimate> csi;
    const double span = num.snapshot_doppler_span();
    for (int u = 0; u < users; ++u) {
        std::vector<int> d{static_cast<int>(rng() % L), static_cast<int>(L - 1 - rng() % 2)};
        if (d[0] == d[1]) d.pop_back();
        std::vector<CVec> g;
        for (size_t p = 0; p < d.size(); ++p) g.push_back(random_vec(rng, antennas));
        csi.push_back(make_csi(u, d, 0.6 * span * uniform01(rng), g));
    }
    return csi;
}

}  // namespace

TEST_CASE("zero delay and Doppler is the identity") {
    const auto num = small_num(16, 4, 8);
    const auto C = path_operator(0, 0.0, num);
    CHECK(C.max_column_nnz() == 1);
    CHECK(C.frobenius2() == doctest::Approx(16.0 * 4));
    std::vector<TerminalEstimate> csi{make_csi(3, {0}, 0.0, {CVec{1.0}})};
    const EffectiveChannel H(csi, num, 1);
    Rng rng(1);
    const CVec x = random_vec(rng, 64);
    CVec y(64);
    H.apply(x, y);
    CHECK(rel_err(y, x) < 1e-14);
}

TEST_CASE("integer delay is a cyclic delay shift; on-grid Doppler a Doppler shift") {
    const auto num = small_num(16, 4, 8);
    const int M = num.M, N = num.N;
    Rng rng(2);
    const CVec x = random_vec(rng, M * N);
    for (int d : {1, 5, 7}) {
        for (int kv : {0, 1, 3}) {
            CAPTURE(d);
            CAPTURE(kv);
            const double nu = kv * num.doppler_bin(N);
            const auto C = path_operator(d, nu, num);
            CHECK(C.max_column_nnz() == 1);
            CVec y(M * N);
            C.multiply_acc(x, 1.0, y);
            for (int k = 0; k < N; ++k)
                for (int l = 0; l < M; ++l) {
                    // The phase depends on the absolute sample index of the delayed symbol.
                    const int k2 = (k + kv) % N;
                    const int l2 = (l + d) % M;
                    const double abs_t = num.ts_len + l + d;
                    const cplx ph = std::polar(1.0, kTwoPi * std::fmod(nu * abs_t / num.sample_rate(), 1.0));
                    CHECK(std::abs(y[k2 * M + l2] - ph * x[k * M + l]) < 1e-10);
                }
        }
    }
}

TEST_CASE("adjoint identity") {
    const auto num = small_num(32, 8, 16);
    Rng rng(3);
    const auto csi = random_csi(rng, 3, 4, num, 12);
    const EffectiveChannel H(csi, num, 4);
    CHECK(H.users() == 3);
    CHECK(H.grid_size() == 256);
    for (int t = 0; t < 5; ++t) {
        const CVec x = random_vec(rng, 3 * 256);
        const CVec y = random_vec(rng, 4 * 256);
        CVec Hx(y.size()), Hty(x.size());
        H.apply(x, Hx);
        H.adjoint(y, Hty);
        CHECK(std::abs(inner(Hx, y) - inner(x, Hty)) < 1e-10 * std::abs(inner(Hx, y)));
    }
    CHECK(H.frobenius2() == doctest::Approx(dense(H).squaredNorm()).epsilon(1e-6));
}

TEST_CASE("operator matches the simulated channel after TS removal and tail folding") {
    OtfsNumerology num = small_num(32, 8, 32);
    rx::DelayWindow win{8, 4};
    channel::PopulationParams pp;
    pp.ts_len = num.ts_len;
    pp.L_max = win.L_max;
    pp.D_max = win.D_max;
    pp.ts_seed = 4;
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const auto pop = channel::draw_population(10, seed, pp);
        std::vector<waveform::TrainingSequence> ts;
        for (const auto& t : pop) ts.push_back(t.ts);
        const auto act = channel::draw_activity(pop, 3, seed + 100);
        const auto real = channel::make_realization(pop, act, 4, INFINITY, num.sample_rate());
        Rng rng(seed);
        std::vector<channel::TxSignal> tx;
        CVec x;
        std::vector<TerminalEstimate> csi;
        for (const auto& t : real.terminals) {
            waveform::DDGrid g(num.M, num.N);
            for (auto& z : g.values()) z = complex_gaussian(rng);
            x.insert(x.end(), g.values().begin(), g.values().end());
            tx.push_back({t.id, waveform::assemble_frame(g, t.ts).samples});
            csi.push_back(genie_estimate(real, t.id));
        }
        const auto r = channel::apply_channel(tx, real, num.frame_length(), 0);
        const auto ts_part = reconstruct_ts_contribution(csi, ts, num, 4);
        const CVec y = payload_observation(r, ts_part, num, win.taps() - 1);
        const EffectiveChannel H(csi, num, 4);
        CVec Hx(y.size());
        H.apply(x, Hx);
        CHECK(rel_err(Hx, y) < 1e-8);
    }
}

TEST_CASE("CG solution equals the dense ridge solution") {
    const auto num = small_num(16, 4, 8);
    Rng rng(5);
    for (double reg : {1e-3, 0.5}) {
        const auto csi = random_csi(rng, 2, 3, num, 6);
        const EffectiveChannel H(csi, num, 3);
        const CVec y = random_vec(rng, 3 * 64);
        const auto D = dense(H);
        const Eigen::VectorXcd ye = Eigen::Map<const Eigen::VectorXcd>(y.data(), y.size());
        const Eigen::MatrixXcd Nm =
            D.adjoint() * D + reg * Eigen::MatrixXcd::Identity(D.cols(), D.cols());
        const Eigen::VectorXcd xe = Nm.ldlt().solve(D.adjoint() * ye);
        SolverOptions so;
        so.reg = reg;
        so.tol = 1e-12;
        so.max_iters = 2000;
        const auto sol = ls_detect(y, H, so);
        CHECK(sol.converged);
        CHECK(sol.reg == reg);
        const CVec ref(xe.data(), xe.data() + xe.size());
        CHECK(rel_err(sol.x, ref) < 1e-8);
    }
}

TEST_CASE("orthogonal steering decouples the users") {
    const auto num = small_num(16, 4, 8);
    std::vector<TerminalEstimate> csi{make_csi(0, {0, 3}, 1000.0, {CVec{1.0, 0.0}, CVec{0.4, 0.0}}),
                                      make_csi(1, {2}, 5000.0, {CVec{0.0, cplx(0, 1)}})};
    const EffectiveChannel H(csi, num, 2);
    const auto D = dense(H);
    // Antenna 0 rows see only user 0 and vice versa.
    CHECK(D.block(0, 64, 64, 64).norm() == 0.0);
    CHECK(D.block(64, 0, 64, 64).norm() == 0.0);
    Rng rng(6);
    const CVec x = random_vec(rng, 128);
    CVec y(128);
    H.apply(x, y);
    SolverOptions so;
    so.reg = 0.0;
    so.tol = 1e-12;
    const auto sol = ls_detect(y, H, so);
    CHECK(rel_err(sol.x, x) < 1e-8);
}

TEST_CASE("noiseless genie detection on (32, 8) is error free") {
    const auto num = small_num(32, 8, 32);
    rx::DelayWindow win{8, 4};
    channel::PopulationParams pp;
    pp.ts_len = num.ts_len;
    pp.L_max = win.L_max;
    pp.D_max = win.D_max;
    const auto pop = channel::draw_population(20, 9, pp);
    std::vector<waveform::TrainingSequence> ts;
    for (const auto& t : pop) ts.push_back(t.ts);
    const auto real = channel::make_realization(pop, channel::draw_activity(pop, 2, 1), 4, INFINITY, num.sample_rate());
    const auto q = waveform::Constellation::qpsk();
    Rng rng(7);
    std::vector<channel::TxSignal> tx;
    std::vector<TerminalBits> truth;
    std::vector<TerminalEstimate> csi;
    CVec x;
    for (const auto& t : real.terminals) {
        std::vector<uint8_t> bits(2 * num.M * num.N);
        for (auto& b : bits) b = rng() & 1;
        const CVec sym = q.map(bits);
        waveform::DDGrid g(num.M, num.N);
        std::copy(sym.begin(), sym.end(), g.values().begin());
        x.insert(x.end(), sym.begin(), sym.end());
        tx.push_back({t.id, waveform::assemble_frame(g, t.ts).samples});
        truth.push_back({t.id, bits});
        csi.push_back(genie_estimate(real, t.id));
    }
    const auto r = channel::apply_channel(tx, real, num.frame_length(), 0);
    const CVec y = payload_observation(r, reconstruct_ts_contribution(csi, ts, num, 4), num, win.taps() - 1);
    const EffectiveChannel H(csi, num, 4);
    SolverOptions so;
    so.reg = 0.0;
    so.tol = 1e-12;
    so.max_iters = 5000;
    const auto sol = ls_detect(y, H, so);
    CHECK(rel_err(sol.x, x) < 1e-6);
    std::vector<TerminalBits> det;
    for (size_t u = 0; u < csi.size(); ++u)
        det.push_back({csi[u].id, demap(std::span<const cplx>(sol.x).subspan(u * 256, 256), q)});
    const auto rep = compute_ber(det, truth);
    CHECK(rep.aggregate == 0.0);
}

TEST_CASE("identifiability and input checks") {
    const auto num = small_num(16, 4, 8);
    std::vector<TerminalEstimate> csi{make_csi(0, {0}, 0.0, {CVec{1.0}}), make_csi(1, {1}, 0.0, {CVec{1.0}})};
    const EffectiveChannel H(csi, num, 1);
    const CVec y(64);
    CHECK_THROWS_AS(ls_detect(y, H), IdentifiabilityError);
    try {
        ls_detect(y, H);
    } catch (const IdentifiabilityError& e) {
        CHECK(e.users() == 2);
        CHECK(e.antennas() == 1);
    }
    CHECK_THROWS_AS(EffectiveChannel({}, num, 1), std::invalid_argument);
    // A zero observation gives the zero solution.
    std::vector<TerminalEstimate> one{csi[0]};
    const auto sol = ls_detect(y, EffectiveChannel(one, num, 1));
    for (auto z : sol.x) CHECK(z == cplx(0.0));
}

TEST_CASE("demapping and BER bookkeeping") {
    const auto q = waveform::Constellation::qpsk();
    const CVec soft{q.points()[3] * 0.2, 0.0, (q.points()[0] + q.points()[2]) / 2.0};
    CHECK(demap(soft, q) == std::vector<uint8_t>{1, 1, 0, 0, 0, 0});

    const std::vector<TerminalBits> truth{{1, {0, 0, 1, 1}}, {4, {1, 1, 1, 1}}, {9, {0, 1, 0, 1}}};
    const std::vector<TerminalBits> det{{1, {0, 1, 1, 1}}, {9, {0, 1, 0, 1}}, {30, {1, 1, 1, 1}}};
    const auto rep = compute_ber(det, truth);
    CHECK(rep.ids == std::vector<int>{1, 4, 9});
    CHECK(rep.ber == std::vector<double>{0.25, 0.5, 0.0});
    CHECK(rep.missed == std::vector<char>{0, 1, 0});
    CHECK(rep.aggregate == doctest::Approx((1 + 2 + 0) / 12.0));
}

TEST_CASE("identity channel solves to the observation") {
    const auto num = small_num(16, 4, 8);
    std::vector<TerminalEstimate> csi{make_csi(0, {0}, 0.0, {CVec{1.0}})};
    const EffectiveChannel H(csi, num, 1);
    Rng rng(4);
    const CVec y = random_vec(rng, 64);
    SolverOptions o;
    o.reg = 0.0;
    const auto r = ls_detect(y, H, o);
    CHECK(r.converged);
    CHECK(rel_err(r.x, y) < 1e-12);
}

TEST_CASE("demap: exact and slightly perturbed points") {
    Rng rng(6);
    for (const auto& c : {waveform::Constellation::qpsk(), waveform::Constellation::qam16()}) {
        const int bps = c.bits_per_symbol();
        for (size_t s = 0; s < c.points().size(); ++s) {
            const cplx p = c.points()[s];
            for (const cplx q : {p, p + 0.05 * complex_gaussian(rng)}) {
                const auto bits = demap(CVec{q}, c);
                REQUIRE(bits.size() == size_t(bps));
                int label = 0;
                for (int b = 0; b < bps; ++b) label = 2 * label + bits[b];
                CHECK(c.points()[label] == p);
            }
        }
    }
}

TEST_CASE("one of two users missed") {
    const std::vector<TerminalBits> truth{{2, {0, 1, 1, 0}}, {5, {1, 0, 0, 1}}};
    const std::vector<TerminalBits> det{{2, {0, 1, 1, 0}}};
    const auto rep = compute_ber(det, truth);
    CHECK(rep.aggregate == doctest::Approx(0.25));
    CHECK(rep.ber == std::vector<double>{0.0, 0.5});
}
