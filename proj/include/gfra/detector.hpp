#pragma once
// DD-domain least-squares multi-user detection.

#include <optional>
#include <span>
#include <vector>

#include "gfra/channel.hpp"
#include "gfra/receiver.hpp"
#include "gfra/waveform.hpp"

namespace gfra::mud {

using rx::TerminalEstimate;
using waveform::DDGrid;
using waveform::OtfsNumerology;

/// Sparse matrix in compressed-column form, square over the M*N DD vector
/// (index k*M + l, Doppler-major like DDGrid).
struct SparseColumns {
    int dim = 0;
    std::vector<int> col_ptr;  // dim + 1
    std::vector<int> row;
    CVec val;

    void multiply_acc(std::span<const cplx> x, cplx alpha, std::span<cplx> y) const;
    void adjoint_acc(std::span<const cplx> y, cplx alpha, std::span<cplx> x) const;
    size_t max_column_nnz() const;
    double frobenius2() const;
};

/// Unit-gain response of one path (total delay, Doppler) from a transmitted DD
/// grid to the demodulated payload after tail overlap-add. Entries below
/// `prune` times the column's largest magnitude are dropped.
SparseColumns path_operator(int delay, double doppler, const OtfsNumerology& num, double prune = 1e-6);

/// y_a = sum_k sum_p g[k][p][a] C[k][p] x_k
class EffectiveChannel {
public:
    EffectiveChannel(std::span<const TerminalEstimate> csi, const OtfsNumerology& num, int antennas);

    int users() const { return static_cast<int>(ids_.size()); }
    int antennas() const { return antennas_; }
    int grid_size() const { return dim_; }
    const std::vector<int>& ids() const { return ids_; }
    size_t max_column_nnz() const;
    double frobenius2() const;

    /// x: users()*MN stacked per user; y: antennas()*MN stacked per antenna.
    void apply(std::span<const cplx> x, std::span<cplx> y) const;
    void adjoint(std::span<const cplx> y, std::span<cplx> x) const;

private:
    struct PathOp {
        SparseColumns C;
        CVec gain;  // per antenna
    };
    int antennas_ = 0;
    int dim_ = 0;
    std::vector<int> ids_;
    std::vector<std::vector<PathOp>> ops_;  // [user][path]
};

/// Genie CSI for one active terminal of a realization.
TerminalEstimate genie_estimate(const channel::ChannelRealization& real, int id);

struct SolverOptions {
    double reg = -1.0;  // negative selects 1e-6 * ||H||_F^2 / (K_hat * M * N)
    double tol = 1e-8;
    int max_iters = 500;
};

struct SolveResult {
    CVec x;  // stacked per user
    int iterations = 0;
    double relative_residual = 0.0;  // ||H^H y - (H^H H + reg) x|| / ||H^H y||
    double reg = 0.0;
    bool converged = false;
};

/// Ridge-regularised LS by conjugate gradients on the normal equations.
/// Throws IdentifiabilityError when users() > antennas().
SolveResult ls_detect(std::span<const cplx> y, const EffectiveChannel& H, const SolverOptions& opts = {});

/// Nearest-point Gray demapping, label bits MSB first.
std::vector<uint8_t> demap(std::span<const cplx> soft, const waveform::Constellation& c);

/// Noiseless TS-only contribution of the given terminals at every antenna.
channel::MultiAntennaSignal reconstruct_ts_contribution(std::span<const TerminalEstimate> csi,
                                                        std::span<const waveform::TrainingSequence> ts_by_terminal,
                                                        const OtfsNumerology& num, int antennas);

/// Payload windows with the following L-1 tail samples folded back, minus
/// `ts_part`, demodulated; stacked per antenna (antenna-major, MN each).
CVec payload_observation(const channel::MultiAntennaSignal& received, const channel::MultiAntennaSignal& ts_part,
                         const OtfsNumerology& num, int overlap);

struct TerminalBits {
    int id = 0;
    std::vector<uint8_t> bits;
};

struct DetectionReport {
    std::vector<int> ids;           // evaluated terminals (true ATS)
    std::vector<double> ber;        // per terminal, 0.5 for a missed one
    std::vector<char> missed;
    double aggregate = 0.0;         // bit-weighted
    int iterations = 0;
    double residual = 0.0;
    bool converged = true;
};

/// Terminals in `truth` but not in `detected` count at error rate 0.5; false
/// alarms are ignored.
DetectionReport compute_ber(std::span<const TerminalBits> detected, std::span<const TerminalBits> truth);

}  // namespace gfra::mud
