#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "gfra/quantizer.hpp"
#include "gfra/rng.hpp"
#include "oracles.hpp"

using namespace gfra;
using namespace gfra::quant;

namespace {

std::vector<double> draw(const char* kind, int n, uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> nd;
    std::exponential_distribution<double> ex;
    std::vector<double> v(n);
    for (auto& x : v) {
        const std::string k = kind;
        if (k == "gauss") x = nd(rng);
        else if (k == "uniform") x = 2.0 * uniform01(rng) - 1.0;
        else if (k == "laplace") x = (uniform01(rng) < 0.5 ? -1 : 1) * ex(rng);
        else x = 3.0 * nd(rng) + (uniform01(rng) < 0.3 ? 4.0 : 0.0);
    }
    return v;
}

}  // namespace

TEST_CASE("two-bit Gaussian levels match the analytic fixed point") {
    const auto ref = oracle::gaussian_lloyd_max(4);
    CHECK(ref[2] == doctest::Approx(0.4528).epsilon(1e-3));
    CHECK(ref[3] == doctest::Approx(1.510).epsilon(1e-3));
    const auto samples = draw("gauss", 400000, 21);
    const auto cb = train_lloyd_max(samples, 2, {500, 1e-10});
    REQUIRE(cb.levels.size() == 4);
    for (int i = 0; i < 4; ++i) CHECK(std::abs(cb.levels[i] - ref[i]) <= 0.01 * std::abs(ref[i]));
}

TEST_CASE("distortion is non-increasing and beats the best uniform quantizer") {
    for (const char* kind : {"gauss", "uniform", "laplace", "mixture"}) {
        const auto s = draw(kind, 20000, 5);
        for (int bits = 1; bits <= 4; ++bits) {
            CAPTURE(kind);
            CAPTURE(bits);
            const auto cb = train_lloyd_max(s, bits);
            REQUIRE(!cb.distortion.empty());
            for (size_t i = 1; i < cb.distortion.size(); ++i)
                CHECK(cb.distortion[i] <= cb.distortion[i - 1] * (1.0 + 1e-12));
            CHECK(std::is_sorted(cb.levels.begin(), cb.levels.end()));
            CHECK(std::adjacent_find(cb.levels.begin(), cb.levels.end()) == cb.levels.end());
            CHECK(quantizer_mse(s, cb) <= optimal_uniform_mse(s, bits) * (1.0 + 1e-9));
        }
    }
}

TEST_CASE("quantize_real picks the nearest level, ties to the lower one") {
    QuantizerCodebook cb;
    cb.bits = 2;
    cb.levels = {-3.0, -1.0, 1.0, 3.0};
    cb.thresholds = {-2.0, 0.0, 2.0};
    const std::vector<double> x{-5.0, -2.0, -1.9, 0.0, 0.1, 2.0, 2.5, 9.0};
    std::vector<double> out(x.size());
    quantize_real(x, cb, out);
    CHECK(out == std::vector<double>{-3.0, -3.0, -1.0, -1.0, 1.0, 1.0, 3.0, 3.0});
    const CVec z = quantize(CVec{{0.5, -2.5}}, cb);
    CHECK(z[0] == cplx{1.0, -3.0});
}

TEST_CASE("training errors") {
    CHECK_THROWS_AS(train_lloyd_max(std::vector<double>{1.0, 2.0, 3.0}, 2), TrainingError);
    CHECK_THROWS_AS(train_lloyd_max(std::vector<double>{1.0, 1.0, 1.0, 1.0, 2.0}, 2), TrainingError);
    CHECK_THROWS_AS(train_lloyd_max(draw("gauss", 100, 1), 0), TrainingError);
    CHECK_NOTHROW(train_lloyd_max(std::vector<double>{1.0, 2.0, 3.0, 4.0}, 2));
}

TEST_CASE("front end") {
    Rng rng(8);
    channel::MultiAntennaSignal r(3, CVec(500));
    for (auto& a : r)
        for (auto& z : a) z = complex_gaussian(rng, 4.0);
    CHECK(FrontEnd::passthrough().apply(r) == r);
    CHECK(FrontEnd::from_bits(0).ideal());
    const auto q = FrontEnd::from_bits(3).apply(r);
    std::set<double> values;
    double err = 0.0, pow = 0.0;
    for (size_t a = 0; a < r.size(); ++a)
        for (size_t t = 0; t < r[a].size(); ++t) {
            values.insert(q[a][t].real());
            values.insert(q[a][t].imag());
            err += std::norm(q[a][t] - r[a][t]);
            pow += std::norm(r[a][t]);
        }
    // One codebook shared by both rails and all antennas.
    CHECK(values.size() <= 8);
    // 3-bit Lloyd-Max on a Gaussian: SQNR close to 14.6 dB.
    CHECK(10 * std::log10(pow / err) == doctest::Approx(14.6).epsilon(0.05));
}
