#pragma once
// Monte-Carlo harness: configuration, paired trials across schemes, metrics,
// aggregation and CSV/JSON output.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gfra/channel.hpp"
#include "gfra/receiver.hpp"
#include "gfra/waveform.hpp"

namespace gfra::sim {

enum class Scheme { ts_otfs, otfs_dd_pilot, ofdm_baseline };
const char* scheme_name(Scheme s);
Scheme parse_scheme(const std::string& s);

struct ExperimentConfig {
    // numerology
    int M = 64;
    int N = 8;
    int ts_len = 64;
    double delta_f = 960e3;
    double carrier_freq = 10e9;
    // population and channel
    int K = 100;
    int K_a = 10;
    int antennas = 16;
    double snr_db = 15.0;
    int paths = 3;
    int L_max = 16;
    int D_max = 8;
    double nu_max = 178.2e3;
    double rician_k_db = 10.0;
    double pdp_decay_db = 3.0;
    // receiver
    double cgad_tau = 3.0;
    double confirm_tau = 20.0;
    int somp_max_taps = 30;
    int doppler_pad_factor = 32;
    int doppler_hypotheses = 3;  // intra-window ramp hypotheses per TS shift
    int oversample_doppler = 1;
    int ofdm_pilot_spacing = 2;
    // detector
    double detector_reg = -1.0;  // negative: automatic ridge
    double solver_tol = 1e-8;
    int solver_max_iters = 500;
    bool genie_csi = false;
    std::string modulation = "qpsk";
    // harness
    std::vector<Scheme> schemes{Scheme::ts_otfs, Scheme::otfs_dd_pilot, Scheme::ofdm_baseline};
    std::vector<int> adc_bits{0};
    int trials = 200;
    uint64_t seed = 1;
    int workers = 1;  // 0: one per hardware thread
    std::string sweep_var;
    std::vector<double> sweep_values;

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys and a
    /// missing required key (M, N, K, K_a, snr_db, trials) raise ConfigError.
    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);

    /// Assigns one key from its textual value (ConfigError on bad key/value).
    void set(const std::string& key, const std::string& value);
    /// Range checks across all keys; throws ConfigError naming the key.
    void validate() const;
    /// Every key with its canonical textual value, in a fixed order.
    std::vector<std::pair<std::string, std::string>> canonical() const;
    std::string to_text() const;

    waveform::OtfsNumerology numerology() const;
    rx::DelayWindow window() const;
    double noise_var() const;
};

struct SchemeMetrics {
    Scheme scheme = Scheme::ts_otfs;
    int adc_bits = 0;
    std::optional<double> aer;
    int misses = 0;
    int false_alarms = 0;
    std::vector<double> nmse_per_terminal;
    std::optional<double> nmse;  // mean over nmse_per_terminal; missing when empty
    std::optional<double> nmse_other_lattice;  // (M,2N) when oversample_doppler is 1, else (M,N)
    std::optional<double> ber;
    int solver_iterations = 0;
    bool solver_converged = true;
};

struct TrialRecord {
    int index = 0;
    uint64_t seed = 0;
    std::vector<int> true_ats;
    std::vector<SchemeMetrics> metrics;
    std::map<std::string, double> runtime_ms;  // per stage; not part of any output file

    const SchemeMetrics* find(Scheme s, int adc_bits) const;
};

/// State shared by every trial of one configuration (training sequences,
/// dictionaries, pilot sequences).
class TrialContext {
public:
    explicit TrialContext(const ExperimentConfig& cfg);
    const ExperimentConfig& config() const { return cfg_; }
    TrialRecord run(int index) const;

    const std::vector<waveform::TrainingSequence>& training() const { return ts_; }
    const rx::MmvDictionary& dictionary() const { return dict_; }

private:
    ExperimentConfig cfg_;
    std::vector<waveform::TrainingSequence> ts_;
    rx::MmvDictionary dict_;
    std::vector<CVec> ofdm_pilots_;
    rx::MmvDictionary ofdm_dict_;
};

TrialRecord run_trial(const ExperimentConfig& cfg, int index);

double compute_aer(const std::vector<int>& truth, const std::vector<int>& estimate, int K);
/// Mean of ||h_hat - h||^2 / ||h||^2 over the given pairs, skipping ||h|| = 0.
std::optional<double> compute_nmse(const std::vector<std::vector<cplx>>& truth,
                                   const std::vector<std::vector<cplx>>& estimate);

struct ResultRow {
    std::string sweep_var = "none";
    double sweep_value = 0.0;
    std::string scheme;
    int adc_bits = 0;
    std::string metric;
    double mean = 0.0;
    double stderr_ = 0.0;
    int trials = 0;
    uint64_t root_seed = 0;
};

struct ResultTable {
    ExperimentConfig config;
    std::vector<ResultRow> rows;
};

/// Aggregates one sweep point; rows are ordered by scheme, adc_bits, metric.
std::vector<ResultRow> aggregate(const ExperimentConfig& cfg, const std::vector<TrialRecord>& records,
                                 const std::string& sweep_var, double sweep_value);

/// Runs every sweep point; trial t uses split_seed(seed, t) at every point so
/// the points are paired. Output does not depend on `workers`.
ResultTable run_experiment(const ExperimentConfig& cfg, std::vector<TrialRecord>* records = nullptr);

std::vector<TrialRecord> run_trials(const ExperimentConfig& cfg);

std::string to_csv(const ResultTable& table);
std::string to_json(const ResultTable& table);
std::vector<ResultRow> parse_csv(const std::string& text);
/// Writes results.csv and results.json into `dir` (created if needed).
void emit_results(const ResultTable& table, const std::filesystem::path& dir);

}  // namespace gfra::sim
