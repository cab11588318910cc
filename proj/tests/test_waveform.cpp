#include <doctest.h>

#include <algorithm>
#include <bitset>
#include <cmath>

#include "gfra/fft.hpp"
#include "gfra/rng.hpp"
#include "gfra/waveform.hpp"
#include "oracles.hpp"

using namespace gfra;
using namespace gfra::waveform;

namespace {

DDGrid random_grid(int M, int N, uint64_t seed) {
    Rng rng(seed);
    DDGrid g(M, N);
    for (auto& z : g.values()) z = complex_gaussian(rng);
    return g;
}

double max_abs_diff(std::span<const cplx> a, std::span<const cplx> b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_CASE("fft matches direct DFT for every length") {
    Rng rng(1);
    for (int L : {1, 2, 3, 4, 5, 6, 7, 8, 12, 16, 17, 64, 100, 256}) {
        CAPTURE(L);
        CVec x(L);
        for (auto& z : x) z = complex_gaussian(rng);
        for (auto dir : {dsp::Direction::forward, dsp::Direction::inverse}) {
            const double sgn = dir == dsp::Direction::forward ? -1.0 : 1.0;
            CVec ref(L);
            for (int k = 0; k < L; ++k)
                for (int n = 0; n < L; ++n) ref[k] += x[n] * std::polar(1.0, sgn * kTwoPi * double(k) * n / L);
            CVec y = x;
            dsp::fft(y, dir);
            CHECK(max_abs_diff(y, ref) < 1e-10 * L);
        }
        CVec y = x;
        dsp::unitary_dft(y);
        dsp::unitary_idft(y);
        CHECK(max_abs_diff(y, x) < 1e-12 * L);
    }
}

TEST_CASE("OTFS modulation equals the dense matrix oracle") {
    for (auto [M, N] : {std::pair{4, 2}, {8, 4}, {16, 4}, {16, 1}, {5, 3}}) {
        CAPTURE(M);
        CAPTURE(N);
        const CMatrix U = oracle::dense_modulator(M, N);
        const DDGrid g = random_grid(M, N, 100 + M * N);
        const CVec ref = oracle::matvec(U, g.values());
        const TimeBlocks tb = otfs_modulate(g);
        CHECK(max_abs_diff(tb.samples, ref) < 1e-10);

        // U is unitary, so demodulation is U^H.
        CHECK(max_abs_diff(otfs_demodulate(tb).values(), oracle::adjoint_matvec(U, ref)) < 1e-10);
    }
}

TEST_CASE("OTFS round trip is exact up to (256, 8)") {
    for (auto [M, N] : {std::pair{2, 1}, {16, 4}, {64, 8}, {100, 6}, {256, 8}}) {
        CAPTURE(M);
        const DDGrid g = random_grid(M, N, 7);
        const DDGrid back = otfs_demodulate(otfs_modulate(g));
        CHECK(max_abs_diff(back.values(), g.values()) < 1e-10);
        CHECK(max_abs_diff(sfft(isfft(g)).values(), g.values()) < 1e-10);
        double e = 0.0;
        for (auto z : otfs_modulate(g).samples) e += std::norm(z);
        CHECK(e == doctest::Approx(g.energy()).epsilon(1e-12));
    }
}

TEST_CASE("frame layout places TS and payload blocks") {
    OtfsNumerology num;
    num.M = 8;
    num.N = 3;
    num.ts_len = 4;
    const FrameLayout lay(num);
    CHECK(lay.length() == 4 * 4 + 3 * 8);
    CHECK(lay.ts_start(0) == 0);
    CHECK(lay.ts_start(3) == 36);
    CHECK(lay.payload_start(0) == 4);
    CHECK(lay.payload_start(2) == 28);

    const DDGrid g = random_grid(8, 3, 3);
    const auto ts = make_training_sequence(9, 2, 4);
    const TsOtfsFrame f = assemble_frame(g, ts);
    REQUIRE(static_cast<int>(f.samples.size()) == lay.length());
    for (int i = 0; i <= 3; ++i)
        for (int j = 0; j < 4; ++j) CHECK(f.samples[lay.ts_start(i) + j] == ts.samples[j]);
    const ParsedFrame p = parse_frame(f, num);
    CHECK(max_abs_diff(p.grid.values(), g.values()) < 1e-12);
    CHECK(p.ts == ts.samples);
}

TEST_CASE("training sequences depend only on seed and terminal") {
    const auto a = make_training_sequence(5, 3, 64);
    const auto b = make_training_sequence(5, 3, 64);
    const auto c = make_training_sequence(5, 4, 64);
    CHECK(a.samples == b.samples);
    CHECK(a.samples != c.samples);
    double e = 0.0;
    const auto big = make_training_sequence(1, 0, 20000);
    for (auto z : big.samples) e += std::norm(z);
    CHECK(e / 20000.0 == doctest::Approx(1.0).epsilon(0.03));
}

TEST_CASE("constellations are Gray labelled with unit energy") {
    for (const auto& c : {Constellation::qpsk(), Constellation::qam16()}) {
        const auto pts = c.points();
        double e = 0.0;
        double dmin = 1e9;
        for (auto p : pts) e += std::norm(p);
        CHECK(e / pts.size() == doctest::Approx(1.0));
        for (size_t i = 0; i < pts.size(); ++i)
            for (size_t j = i + 1; j < pts.size(); ++j) dmin = std::min(dmin, std::abs(pts[i] - pts[j]));
        for (size_t i = 0; i < pts.size(); ++i)
            for (size_t j = i + 1; j < pts.size(); ++j)
                if (std::abs(std::abs(pts[i] - pts[j]) - dmin) < 1e-12)
                    CHECK(std::bitset<8>(i ^ j).count() == 1);
        for (size_t i = 0; i < pts.size(); ++i) CHECK(c.nearest(pts[i] * 1.1) == static_cast<int>(i));
    }
    // Equidistant between labels 0 and 1 resolves to 0.
    const auto q = Constellation::qpsk();
    CHECK(q.nearest((q.points()[0] + q.points()[1]) / 2.0) == 0);
    CHECK(q.nearest(0.0) == 0);
    const std::vector<uint8_t> bits{0, 1, 1, 0};
    const CVec s = q.map(bits);
    CHECK(s[0] == q.points()[1]);
    CHECK(s[1] == q.points()[2]);
}

TEST_CASE("OFDM modem round trip and flat-channel estimate") {
    OfdmParams p{16, 4, 4, 2};
    Rng rng(3);
    TFGrid g(p.symbols, p.M);
    for (auto& z : g.values()) z = complex_gaussian(rng);
    const CVec tx = ofdm_modulate(g, p);
    CHECK(static_cast<int>(tx.size()) == p.frame_length());
    CHECK(max_abs_diff(ofdm_demodulate(tx, p).values(), g.values()) < 1e-12);

    // Two-tap channel within the CP: the LS estimate at pilots is exact and
    // the equalizer recovers the data on pilot subcarriers.
    CVec rx(tx.size());
    const cplx h0{0.8, 0.1};
    const cplx h1{-0.2, 0.3};
    for (size_t t = 0; t < tx.size(); ++t) rx[t] = h0 * tx[t] + (t >= 1 ? h1 * tx[t - 1] : 0.0);
    const TFGrid rg = ofdm_demodulate(rx, p);
    const TFGrid est = ofdm_ls_channel_estimate(rg, g, p);
    for (int n = 0; n < p.symbols; ++n)
        for (int m : p.pilot_subcarriers()) {
            const cplx H = h0 + h1 * std::polar(1.0, -kTwoPi * m / p.M);
            CHECK(std::abs(est(n, m) - H) < 1e-10);
        }
    CHECK(p.pilot_subcarriers().size() + p.data_subcarriers().size() == static_cast<size_t>(p.M));
    CHECK_THROWS_AS(p.validate(5), ConfigError);
    CHECK_NOTHROW(p.validate(4));
}

TEST_CASE("numerology validation") {
    OtfsNumerology num;
    CHECK_NOTHROW(num.validate());
    CHECK(num.frame_length() == 9 * 64 + 8 * 64);
    CHECK(num.doppler_bin(8) == doctest::Approx(num.sample_rate() / (8.0 * 128)));
    num.M = 1;
    CHECK_THROWS_AS(num.validate(), ConfigError);
}
