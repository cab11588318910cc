#pragma once
// Reference computations written straight from the definitions, with no code
// shared with the library. Used by the unit tests and the acceptance runner.
#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <vector>

#include "gfra/channel.hpp"
#include "gfra/types.hpp"
#include "gfra/waveform.hpp"

namespace oracle {

using gfra::cplx;
using gfra::CMatrix;
using gfra::CVec;
using gfra::kTwoPi;

// Dense MN x MN OTFS modulator: symplectic transform into TF, then an M-point
// IDFT per symbol. Row: time sample n*M + i. Column: DD index k*M + l.
inline CMatrix dense_modulator(int M, int N) {
    CMatrix U(M * N, M * N);
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < M; ++i)
            for (int k = 0; k < N; ++k)
                for (int l = 0; l < M; ++l) {
                    cplx acc{};
                    for (int m = 0; m < M; ++m) {
                        const cplx tf = std::polar(1.0 / std::sqrt(double(N) * M),
                                                   kTwoPi * (double(n) * k / N - double(m) * l / M));
                        acc += tf * std::polar(1.0 / std::sqrt(double(M)), kTwoPi * double(m) * i / M);
                    }
                    U(n * M + i, k * M + l) = acc;
                }
    return U;
}

inline CVec matvec(const CMatrix& A, std::span<const cplx> x) {
    CVec y(A.rows);
    for (int c = 0; c < A.cols; ++c)
        for (int r = 0; r < A.rows; ++r) y[r] += A(r, c) * x[c];
    return y;
}

inline CVec adjoint_matvec(const CMatrix& A, std::span<const cplx> y) {
    CVec x(A.cols);
    for (int c = 0; c < A.cols; ++c)
        for (int r = 0; r < A.rows; ++r) x[c] += std::conj(A(r, c)) * y[r];
    return x;
}

// Integer-delay, integer-Doppler multipath over a frame of M*N samples
// (Doppler bin B/(MN)), wrapped cyclically.
struct OnGridChannel {
    int M = 16;
    int N = 4;
    double B = 64.0;
    std::vector<gfra::channel::Path> paths;
    int toa = 0;
    int k_nu = 0;
    double doppler() const { return k_nu * B / (M * N); }
};

// Y = U^H H_t U x with the time-domain channel matrix built entry by entry.
inline CVec dense_dd_channel(const OnGridChannel& c, std::span<const cplx> x) {
    const int MN = c.M * c.N;
    const CMatrix U = dense_modulator(c.M, c.N);
    CMatrix Ht(MN, MN);
    for (const auto& p : c.paths) {
        const int d = p.delay + c.toa;
        for (int t = 0; t < MN; ++t)
            Ht(t, ((t - d) % MN + MN) % MN) += p.gain * std::polar(1.0, kTwoPi * c.doppler() * t / c.B);
    }
    return adjoint_matvec(U, matvec(Ht, matvec(U, x)));
}

// Closed-form DD relation for integer delay and Doppler with a rectangular
// pulse: a 2D circular shift, with a Doppler-bin phase twist on the rows that
// wrapped into the previous block.
inline CVec circular_dd_relation(const OnGridChannel& c, const gfra::waveform::DDGrid& x) {
    gfra::waveform::DDGrid y(c.M, c.N);
    const int MN = c.M * c.N;
    for (const auto& p : c.paths) {
        const int d = p.delay + c.toa;
        for (int l = 0; l < c.M; ++l)
            for (int k = 0; k < c.N; ++k) {
                const int ls = ((l - d) % c.M + c.M) % c.M;
                const int ks = ((k - c.k_nu) % c.N + c.N) % c.N;
                cplx phase = std::polar(1.0, kTwoPi * double(c.k_nu) * l / MN);
                if (l < d) phase *= std::polar(1.0, -kTwoPi * double(ks) / c.N);
                y(l, k) += p.gain * phase * x(ls, ks);
            }
    }
    return {y.values().begin(), y.values().end()};
}

// Lloyd-Max fixed point for a unit Gaussian density using the closed-form
// conditional mean of each cell.
inline std::vector<double> gaussian_lloyd_max(int levels) {
    auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(kTwoPi); };
    auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    std::vector<double> y(levels);
    for (int i = 0; i < levels; ++i) y[i] = -1.5 + 3.0 * i / (levels - 1);
    for (int it = 0; it < 10000; ++it) {
        std::vector<double> edge{-INFINITY};
        for (int i = 0; i + 1 < levels; ++i) edge.push_back(0.5 * (y[i] + y[i + 1]));
        edge.push_back(INFINITY);
        for (int i = 0; i < levels; ++i) y[i] = (phi(edge[i]) - phi(edge[i + 1])) / (Phi(edge[i + 1]) - Phi(edge[i]));
    }
    return y;
}

using Mat = Eigen::MatrixXcd;

inline Mat to_eigen(const CMatrix& m) { return Eigen::Map<const Mat>(m.data.data(), m.rows, m.cols); }

// Least-squares residual energy of Y on the columns `cols` of D.
inline double ls_residual(const Mat& D, const Mat& Y, const std::vector<int>& cols) {
    Mat S(D.rows(), static_cast<Eigen::Index>(cols.size()));
    for (size_t i = 0; i < cols.size(); ++i) S.col(i) = D.col(cols[i]);
    Eigen::HouseholderQR<Mat> qr(S);
    return (Y - S * qr.solve(Y)).squaredNorm();
}

// The k-subset of D's columns with the smallest LS residual, by enumeration.
inline std::vector<int> exhaustive_support(const Mat& D, const Mat& Y, int k) {
    const int n = static_cast<int>(D.cols());
    std::vector<int> idx(k), best;
    std::iota(idx.begin(), idx.end(), 0);
    double best_r = INFINITY;
    while (true) {
        const double r = ls_residual(D, Y, idx);
        if (r < best_r) {
            best_r = r;
            best = idx;
        }
        int i = k - 1;
        while (i >= 0 && idx[i] == n - k + i) --i;
        if (i < 0) return best;
        ++idx[i];
        for (int j = i + 1; j < k; ++j) idx[j] = idx[j - 1] + 1;
    }
}

}  // namespace oracle
