#include "gfra/experiment.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "gfra/detector.hpp"
#include "gfra/quantizer.hpp"
#include "gfra/rng.hpp"

namespace gfra::sim {
namespace {

constexpr uint64_t kTsSeedTag = 0x54532d4f5446530aULL;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::string fmt_double(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

int to_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const long long x = std::stoll(v, &pos);
        if (pos != v.size() || x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) throw 0;
        return static_cast<int>(x);
    } catch (...) {
        throw ConfigError(key, "expected an integer, got '" + v + "'");
    }
}

uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        if (!v.empty() && v[0] == '-') throw 0;
        const unsigned long long x = std::stoull(v, &pos, 0);
        if (pos != v.size()) throw 0;
        return x;
    } catch (...) {
        throw ConfigError(key, "expected an unsigned integer, got '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    if (v == "inf" || v == "+inf") return std::numeric_limits<double>::infinity();
    if (v == "-inf") return -std::numeric_limits<double>::infinity();
    try {
        size_t pos = 0;
        const double x = std::stod(v, &pos);
        if (pos != v.size() || std::isnan(x)) throw 0;
        return x;
    } catch (...) {
        throw ConfigError(key, "expected a number, got '" + v + "'");
    }
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError(key, "expected true or false, got '" + v + "'");
}

const std::vector<std::string>& required_keys() {
    static const std::vector<std::string> keys{"M", "N", "K", "K_a", "snr_db", "trials"};
    return keys;
}

// Keys that may be swept: scalar numeric ones that do not change the trial
// bookkeeping itself.
const std::vector<std::string>& sweepable_keys() {
    static const std::vector<std::string> keys{
        "M", "N", "ts_len", "delta_f", "carrier_freq", "K", "K_a", "antennas", "snr_db", "paths",
        "L_max", "D_max", "nu_max", "rician_k_db", "pdp_decay_db", "cgad_tau", "confirm_tau", "somp_max_taps",
        "doppler_pad_factor", "doppler_hypotheses", "oversample_doppler", "ofdm_pilot_spacing", "detector_reg", "solver_tol",
        "solver_max_iters"};
    return keys;
}

template <class T>
std::string join(const std::vector<T>& v, auto&& f) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) s += ",";
        s += f(v[i]);
    }
    return s;
}

}  // namespace

const char* scheme_name(Scheme s) {
    switch (s) {
        case Scheme::ts_otfs: return "ts_otfs";
        case Scheme::otfs_dd_pilot: return "otfs_dd_pilot";
        case Scheme::ofdm_baseline: return "ofdm_baseline";
    }
    return "?";
}

Scheme parse_scheme(const std::string& s) {
    if (s == "ts_otfs") return Scheme::ts_otfs;
    if (s == "otfs_dd_pilot") return Scheme::otfs_dd_pilot;
    if (s == "ofdm_baseline") return Scheme::ofdm_baseline;
    throw ConfigError("schemes", "unknown scheme '" + s + "'");
}

void ExperimentConfig::set(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (key == "M") M = to_int(key, v);
    else if (key == "N") N = to_int(key, v);
    else if (key == "ts_len") ts_len = to_int(key, v);
    else if (key == "delta_f") delta_f = to_double(key, v);
    else if (key == "carrier_freq") carrier_freq = to_double(key, v);
    else if (key == "K") K = to_int(key, v);
    else if (key == "K_a") K_a = to_int(key, v);
    else if (key == "antennas") antennas = to_int(key, v);
    else if (key == "snr_db") snr_db = to_double(key, v);
    else if (key == "paths") paths = to_int(key, v);
    else if (key == "L_max") L_max = to_int(key, v);
    else if (key == "D_max") D_max = to_int(key, v);
    else if (key == "nu_max") nu_max = to_double(key, v);
    else if (key == "rician_k_db") rician_k_db = to_double(key, v);
    else if (key == "pdp_decay_db") pdp_decay_db = to_double(key, v);
    else if (key == "cgad_tau") cgad_tau = to_double(key, v);
    else if (key == "confirm_tau") confirm_tau = to_double(key, v);
    else if (key == "somp_max_taps") somp_max_taps = to_int(key, v);
    else if (key == "doppler_pad_factor") doppler_pad_factor = to_int(key, v);
    else if (key == "doppler_hypotheses") doppler_hypotheses = to_int(key, v);
    else if (key == "oversample_doppler") oversample_doppler = to_int(key, v);
    else if (key == "ofdm_pilot_spacing") ofdm_pilot_spacing = to_int(key, v);
    else if (key == "detector_reg") detector_reg = (v == "auto") ? -1.0 : to_double(key, v);
    else if (key == "solver_tol") solver_tol = to_double(key, v);
    else if (key == "solver_max_iters") solver_max_iters = to_int(key, v);
    else if (key == "genie_csi") genie_csi = to_bool(key, v);
    else if (key == "modulation") modulation = v;
    else if (key == "schemes") {
        schemes.clear();
        for (const auto& s : split_list(v)) {
            const Scheme sc = parse_scheme(s);
            if (std::find(schemes.begin(), schemes.end(), sc) == schemes.end()) schemes.push_back(sc);
        }
    } else if (key == "adc_bits") {
        adc_bits.clear();
        for (const auto& s : split_list(v)) adc_bits.push_back(to_int(key, s));
    } else if (key == "trials") trials = to_int(key, v);
    else if (key == "seed") seed = to_u64(key, v);
    else if (key == "workers") workers = to_int(key, v);
    else if (key == "sweep_var") sweep_var = v;
    else if (key == "sweep_values") {
        sweep_values.clear();
        for (const auto& s : split_list(v)) sweep_values.push_back(to_double(key, s));
    } else {
        throw ConfigError(key, "unknown key '" + key + "'");
    }
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
    ExperimentConfig cfg;
    std::vector<std::string> seen;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno), "expected 'key = value' on line " + std::to_string(lineno));
        }
        const std::string key = trim(line.substr(0, eq));
        if (std::find(seen.begin(), seen.end(), key) != seen.end()) throw ConfigError(key, "duplicate key '" + key + "'");
        seen.push_back(key);
        cfg.set(key, line.substr(eq + 1));
    }
    for (const auto& k : required_keys()) {
        if (std::find(seen.begin(), seen.end(), k) == seen.end()) throw ConfigError(k, "missing required key '" + k + "'");
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config", "cannot read config file '" + path.string() + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str());
}

void ExperimentConfig::validate() const {
    auto need = [](bool ok, const char* key, const std::string& msg) {
        if (!ok) throw ConfigError(key, std::string(key) + " " + msg);
    };
    need(M >= 2 && M <= 4096, "M", "must lie in [2, 4096]");
    need(N >= 1 && N <= 256, "N", "must lie in [1, 256]");
    need(delta_f > 0 && std::isfinite(delta_f), "delta_f", "must be positive");
    need(carrier_freq > 0 && std::isfinite(carrier_freq), "carrier_freq", "must be positive");
    need(K >= 1, "K", "must be >= 1");
    need(K_a >= 0 && K_a <= K, "K_a", "must lie in [0, K]");
    need(antennas >= 1 && antennas <= 1024, "antennas", "must lie in [1, 1024]");
    need(!std::isnan(snr_db) && snr_db > -100.0, "snr_db", "must be a number above -100 dB (inf allowed)");
    need(L_max >= 1, "L_max", "must be >= 1");
    need(D_max >= 0, "D_max", "must be >= 0");
    need(paths >= 1 && paths <= L_max, "paths", "must lie in [1, L_max]");
    need(ts_len > L_max + D_max, "ts_len", "must exceed L_max + D_max so the non-ISI window is non-empty");
    need(L_max + D_max <= M, "L_max", "L_max + D_max must not exceed M");
    need(rician_k_db > -100.0 && std::isfinite(rician_k_db), "rician_k_db", "must be finite");
    need(pdp_decay_db >= 0.0 && std::isfinite(pdp_decay_db), "pdp_decay_db", "must be >= 0");
    need(cgad_tau > 0.0 && std::isfinite(cgad_tau), "cgad_tau", "must be positive");
    need(confirm_tau > 0.0 && std::isfinite(confirm_tau), "confirm_tau", "must be positive");
    need(somp_max_taps >= 1, "somp_max_taps", "must be >= 1");
    need(doppler_pad_factor >= 1 && doppler_pad_factor <= 1024, "doppler_pad_factor", "must lie in [1, 1024]");
    need(doppler_hypotheses >= 1 && doppler_hypotheses <= 16, "doppler_hypotheses", "must lie in [1, 16]");
    need(oversample_doppler == 1 || oversample_doppler == 2, "oversample_doppler", "must be 1 or 2");
    need(ofdm_pilot_spacing >= 1 && M % ofdm_pilot_spacing == 0 && M / ofdm_pilot_spacing >= L_max + D_max,
         "ofdm_pilot_spacing", "must divide M and leave at least L_max + D_max pilots");
    need(std::isfinite(detector_reg), "detector_reg", "must be finite (negative or 'auto' selects the default)");
    need(solver_tol > 0.0 && solver_tol < 1.0, "solver_tol", "must lie in (0, 1)");
    need(solver_max_iters >= 1, "solver_max_iters", "must be >= 1");
    need(modulation == "qpsk" || modulation == "qam16", "modulation", "must be qpsk or qam16");
    need(!schemes.empty(), "schemes", "must name at least one scheme");
    need(!adc_bits.empty(), "adc_bits", "must list at least one value");
    for (int b : adc_bits) need(b >= 0 && b <= 8, "adc_bits", "values must lie in [0, 8] (0 is the ideal ADC)");
    need(trials >= 1, "trials", "must be >= 1");
    need(workers >= 0 && workers <= 1024, "workers", "must lie in [0, 1024]");
    const auto num = numerology();
    need(nu_max >= 0.0 && nu_max < num.snapshot_doppler_span(), "nu_max",
         "must lie in [0, B/(M+M_t)) = [0, " + fmt_double(num.snapshot_doppler_span()) + ")");
    if (!sweep_var.empty()) {
        const auto& sk = sweepable_keys();
        need(std::find(sk.begin(), sk.end(), sweep_var) != sk.end(), "sweep_var", "is not a sweepable numeric key");
        need(!sweep_values.empty(), "sweep_values", "must list at least one value when sweep_var is set");
    } else {
        need(sweep_values.empty(), "sweep_values", "given without sweep_var");
    }
}

std::vector<std::pair<std::string, std::string>> ExperimentConfig::canonical() const {
    auto i = [](int v) { return std::to_string(v); };
    return {
        {"M", i(M)},
        {"N", i(N)},
        {"ts_len", i(ts_len)},
        {"delta_f", fmt_double(delta_f)},
        {"carrier_freq", fmt_double(carrier_freq)},
        {"K", i(K)},
        {"K_a", i(K_a)},
        {"antennas", i(antennas)},
        {"snr_db", fmt_double(snr_db)},
        {"paths", i(paths)},
        {"L_max", i(L_max)},
        {"D_max", i(D_max)},
        {"nu_max", fmt_double(nu_max)},
        {"rician_k_db", fmt_double(rician_k_db)},
        {"pdp_decay_db", fmt_double(pdp_decay_db)},
        {"cgad_tau", fmt_double(cgad_tau)},
        {"confirm_tau", fmt_double(confirm_tau)},
        {"somp_max_taps", i(somp_max_taps)},
        {"doppler_pad_factor", i(doppler_pad_factor)},
        {"doppler_hypotheses", i(doppler_hypotheses)},
        {"oversample_doppler", i(oversample_doppler)},
        {"ofdm_pilot_spacing", i(ofdm_pilot_spacing)},
        {"detector_reg", detector_reg < 0 ? std::string("auto") : fmt_double(detector_reg)},
        {"solver_tol", fmt_double(solver_tol)},
        {"solver_max_iters", i(solver_max_iters)},
        {"genie_csi", genie_csi ? "true" : "false"},
        {"modulation", modulation},
        {"schemes", join(schemes, [](Scheme s) { return std::string(scheme_name(s)); })},
        {"adc_bits", join(adc_bits, [](int b) { return std::to_string(b); })},
        {"trials", i(trials)},
        {"seed", std::to_string(seed)},
        {"workers", i(workers)},
        {"sweep_var", sweep_var},
        {"sweep_values", join(sweep_values, fmt_double)},
    };
}

std::string ExperimentConfig::to_text() const {
    std::string s;
    for (const auto& [k, v] : canonical()) {
        if (v.empty()) continue;
        s += k + " = " + v + "\n";
    }
    return s;
}

waveform::OtfsNumerology ExperimentConfig::numerology() const {
    waveform::OtfsNumerology num;
    num.M = M;
    num.N = N;
    num.ts_len = ts_len;
    num.delta_f = delta_f;
    num.carrier_freq = carrier_freq;
    return num;
}

rx::DelayWindow ExperimentConfig::window() const { return rx::DelayWindow{L_max, D_max}; }

double ExperimentConfig::noise_var() const { return std::isinf(snr_db) ? 0.0 : std::pow(10.0, -snr_db / 10.0); }

const SchemeMetrics* TrialRecord::find(Scheme s, int adc) const {
    for (const auto& m : metrics)
        if (m.scheme == s && m.adc_bits == adc) return &m;
    return nullptr;
}

// ---------------------------------------------------------------------------

double compute_aer(const std::vector<int>& truth, const std::vector<int>& estimate, int K) {
    if (K < 1) throw std::invalid_argument("compute_aer: K must be >= 1");
    auto in = [](const std::vector<int>& s, int v) { return std::find(s.begin(), s.end(), v) != s.end(); };
    int errors = 0;
    for (int t : truth) errors += !in(estimate, t);
    for (int e : estimate) errors += !in(truth, e);
    return static_cast<double>(errors) / K;
}

std::optional<double> compute_nmse(const std::vector<std::vector<cplx>>& truth,
                                   const std::vector<std::vector<cplx>>& estimate) {
    if (truth.size() != estimate.size()) throw DimensionError("compute_nmse: terminal count mismatch");
    double sum = 0.0;
    int count = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i].size() != estimate[i].size()) throw DimensionError("compute_nmse: lattice size mismatch");
        double num = 0.0, den = 0.0;
        for (size_t j = 0; j < truth[i].size(); ++j) {
            num += std::norm(estimate[i][j] - truth[i][j]);
            den += std::norm(truth[i][j]);
        }
        if (den == 0.0) continue;
        sum += num / den;
        ++count;
    }
    if (count == 0) return std::nullopt;
    return sum / count;
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

waveform::Constellation constellation_for(const ExperimentConfig& cfg) {
    return cfg.modulation == "qam16" ? waveform::Constellation::qam16() : waveform::Constellation::qpsk();
}

rx::ReceiverOptions receiver_options(const ExperimentConfig& cfg) {
    rx::ReceiverOptions o;
    o.window = cfg.window();
    o.cgad_tau = cfg.cgad_tau;
    o.confirm_tau = cfg.confirm_tau;
    o.somp_max_taps = cfg.somp_max_taps;
    o.noise_var = cfg.noise_var();
    o.nu_max = cfg.nu_max;
    o.doppler.pad_factor = cfg.doppler_pad_factor;
    return o;
}

void fill_activity_errors(SchemeMetrics& m, const std::vector<int>& truth, const std::vector<int>& est, int K) {
    m.aer = compute_aer(truth, est, K);
    for (int t : truth) m.misses += std::find(est.begin(), est.end(), t) == est.end();
    for (int e : est) m.false_alarms += std::find(truth.begin(), truth.end(), e) == truth.end();
}

void finish_nmse(SchemeMetrics& m, const std::vector<std::vector<cplx>>& truth,
                 const std::vector<std::vector<cplx>>& est) {
    for (size_t i = 0; i < truth.size(); ++i) {
        const auto v = compute_nmse({truth[i]}, {est[i]});
        if (v) m.nmse_per_terminal.push_back(*v);
    }
    m.nmse = compute_nmse(truth, est);
}

// Per-symbol diagonal of the OFDM channel seen after the FFT.
waveform::TFGrid ofdm_true_response(const channel::ChannelRealization& real, int idx, int antenna,
                                    const waveform::OfdmParams& p) {
    const auto& t = real.terminals[idx];
    waveform::TFGrid H(p.symbols, p.M);
    const double B = real.sample_rate;
    for (int n = 0; n < p.symbols; ++n) {
        const int t0 = n * (p.M + p.cp_len) + p.cp_len;
        cplx avg{};
        for (int i = 0; i < p.M; ++i) avg += std::polar(1.0, kTwoPi * std::fmod(t.doppler * (t0 + i) / B, 1.0));
        avg /= static_cast<double>(p.M);
        for (int m = 0; m < p.M; ++m) {
            cplx f{};
            for (const auto& path : t.paths) {
                const double cyc = std::fmod(static_cast<double>(m) * t.total_delay(path) / p.M, 1.0);
                f += path.gain * std::polar(1.0, -kTwoPi * cyc);
            }
            H(n, m) = real.steering[idx][antenna] * f * avg;
        }
    }
    return H;
}

std::vector<cplx> stack_grids(const std::vector<waveform::DDGrid>& g) {
    std::vector<cplx> out;
    for (const auto& x : g) out.insert(out.end(), x.values().begin(), x.values().end());
    return out;
}

std::vector<cplx> stack_tf(const std::vector<waveform::TFGrid>& g) {
    std::vector<cplx> out;
    for (const auto& x : g) out.insert(out.end(), x.values().begin(), x.values().end());
    return out;
}

}  // namespace

TrialContext::TrialContext(const ExperimentConfig& cfg) : cfg_(cfg) {
    cfg_.validate();
    const uint64_t ts_seed = split_seed(cfg_.seed ^ kTsSeedTag, 0);
    for (int k = 0; k < cfg_.K; ++k) ts_.push_back(waveform::make_training_sequence(ts_seed, k, cfg_.ts_len));
    const auto num = cfg_.numerology();
    const auto ramps = rx::doppler_ramps(cfg_.nu_max, num.sample_rate(), cfg_.doppler_hypotheses);
    dict_ = rx::build_dictionary(ts_, cfg_.ts_len, cfg_.window(), ramps);

    const auto op = waveform::ofdm_params_for(num, cfg_.ofdm_pilot_spacing);
    const int np = static_cast<int>(op.pilot_subcarriers().size());
    for (int k = 0; k < cfg_.K; ++k) ofdm_pilots_.push_back(rx::make_ofdm_pilots(ts_seed, k, np));
    ofdm_dict_ = rx::build_ofdm_dictionary(ofdm_pilots_, op, cfg_.window());
}

TrialRecord TrialContext::run(int index) const {
    const ExperimentConfig& cfg = cfg_;
    const auto num = cfg.numerology();
    const auto win = cfg.window();
    const auto opts = receiver_options(cfg);
    const auto cons = constellation_for(cfg);
    const int A = cfg.antennas;
    const double B = num.sample_rate();

    TrialRecord rec;
    rec.index = index;
    rec.seed = split_seed(cfg.seed, static_cast<uint64_t>(index));

    channel::PopulationParams pp;
    pp.ts_len = cfg.ts_len;
    pp.ts_seed = split_seed(cfg.seed ^ kTsSeedTag, 0);
    pp.paths = cfg.paths;
    pp.L_max = cfg.L_max;
    pp.D_max = cfg.D_max;
    pp.nu_max = cfg.nu_max;
    pp.rician_k_db = cfg.rician_k_db;
    pp.pdp_decay_db = cfg.pdp_decay_db;

    auto t0 = Clock::now();
    const auto population = channel::draw_population(cfg.K, split_seed(rec.seed, 1), pp);
    const auto activity = channel::draw_activity(population, cfg.K_a, split_seed(rec.seed, 2));
    const auto real = channel::make_realization(population, activity, A, cfg.snr_db, B);
    rec.true_ats = activity.active;
    const auto& truth_ats = rec.true_ats;

    // Data bits per active terminal; the OFDM baseline carries a prefix.
    const int bps = cons.bits_per_symbol();
    const int MN = num.M * num.N;
    std::vector<std::vector<uint8_t>> bits;
    for (int id : truth_ats) {
        Rng rng(split_seed(split_seed(rec.seed, 3), static_cast<uint64_t>(id)));
        std::uniform_int_distribution<int> bit(0, 1);
        std::vector<uint8_t> b(static_cast<size_t>(MN) * bps);
        for (auto& x : b) x = static_cast<uint8_t>(bit(rng));
        bits.push_back(std::move(b));
    }
    rec.runtime_ms["setup"] = ms_since(t0);

    auto all_missed = [&](SchemeMetrics& m) { m.ber = 0.5; (void)m; };

    for (Scheme scheme : cfg.schemes) {
        t0 = Clock::now();
        if (scheme == Scheme::ts_otfs) {
            std::vector<channel::TxSignal> tx;
            for (size_t i = 0; i < truth_ats.size(); ++i) {
                const int id = truth_ats[i];
                const CVec sym = cons.map(bits[i]);
                waveform::DDGrid g(num.M, num.N);
                std::copy(sym.begin(), sym.end(), g.values().begin());
                tx.push_back({id, waveform::assemble_frame(g, ts_[id]).samples});
            }
            const auto received = channel::apply_channel(tx, real, num.frame_length(), split_seed(rec.seed, 4));
            for (int adc : cfg.adc_bits) {
                SchemeMetrics m;
                m.scheme = scheme;
                m.adc_bits = adc;
                const auto r = quant::FrontEnd::from_bits(adc).apply(received);

                std::vector<rx::TerminalEstimate> csi;
                std::vector<int> ats;
                if (cfg.genie_csi) {
                    ats = truth_ats;
                    for (int id : truth_ats) csi.push_back(mud::genie_estimate(real, id));
                } else {
                    auto est = rx::estimate_ts_otfs(r, num, dict_, ts_, opts);
                    ats = est.ats;
                    csi = std::move(est.terminals);
                }
                fill_activity_errors(m, truth_ats, ats, cfg.K);

                const int Np = num.N * cfg.oversample_doppler;
                const int Nother = cfg.oversample_doppler == 1 ? 2 * num.N : num.N;
                std::vector<std::vector<cplx>> h_true, h_est, o_true, o_est;
                for (const auto& te : csi) {
                    if (real.index_of(te.id) < 0) continue;
                    std::vector<waveform::DDGrid> gt, ge, ot, oe;
                    for (int a = 0; a < A; ++a) {
                        gt.push_back(channel::dd_cir_on_lattice(real, te.id, a, num, num.M, Np));
                        ge.push_back(te.lattice(a, num, num.M, Np));
                        ot.push_back(channel::dd_cir_on_lattice(real, te.id, a, num, num.M, Nother));
                        oe.push_back(te.lattice(a, num, num.M, Nother));
                    }
                    h_true.push_back(stack_grids(gt));
                    h_est.push_back(stack_grids(ge));
                    o_true.push_back(stack_grids(ot));
                    o_est.push_back(stack_grids(oe));
                }
                finish_nmse(m, h_true, h_est);
                m.nmse_other_lattice = compute_nmse(o_true, o_est);

                if (truth_ats.empty()) {
                    m.ber = 0.0;
                } else if (csi.empty() || static_cast<int>(csi.size()) > A) {
                    all_missed(m);
                } else {
                    const mud::EffectiveChannel H(csi, num, A);
                    const auto ts_part = mud::reconstruct_ts_contribution(csi, ts_, num, A);
                    const CVec y = mud::payload_observation(r, ts_part, num, win.taps() - 1);
                    mud::SolverOptions so{cfg.detector_reg, cfg.solver_tol, cfg.solver_max_iters};
                    const auto sol = mud::ls_detect(y, H, so);
                    m.solver_iterations = sol.iterations;
                    m.solver_converged = sol.converged;
                    std::vector<mud::TerminalBits> det, tru;
                    for (size_t u = 0; u < csi.size(); ++u) {
                        const std::span<const cplx> xu(sol.x.data() + u * MN, MN);
                        det.push_back({csi[u].id, mud::demap(xu, cons)});
                    }
                    for (size_t i = 0; i < truth_ats.size(); ++i) tru.push_back({truth_ats[i], bits[i]});
                    m.ber = mud::compute_ber(det, tru).aggregate;
                }
                rec.metrics.push_back(std::move(m));
            }
        } else if (scheme == Scheme::otfs_dd_pilot) {
            const auto p = rx::dd_pilot_params_for(num, win);
            const CVec pilot = rx::dd_pilot_frame(p);
            std::vector<channel::MultiAntennaSignal> per_terminal;
            for (int id : truth_ats) {
                const int idx = real.index_of(id);
                channel::ChannelRealization solo = real;
                solo.terminals = {real.terminals[idx]};
                solo.steering = {real.steering[idx]};
                const std::vector<channel::TxSignal> tx{{id, pilot}};
                per_terminal.push_back(channel::apply_channel(
                    tx, solo, p.frame_length(), split_seed(split_seed(rec.seed, 6), static_cast<uint64_t>(id))));
            }
            for (int adc : cfg.adc_bits) {
                SchemeMetrics m;
                m.scheme = scheme;
                m.adc_bits = adc;
                const auto fe = quant::FrontEnd::from_bits(adc);
                std::vector<std::vector<cplx>> h_true, h_est;
                for (size_t i = 0; i < truth_ats.size(); ++i) {
                    const int id = truth_ats[i];
                    const auto r = fe.apply(per_terminal[i]);
                    std::vector<waveform::DDGrid> gt, ge;
                    for (int a = 0; a < A; ++a) {
                        gt.push_back(channel::dd_cir_on_lattice(real, id, a, num, num.M, num.N));
                        ge.push_back(cfg.genie_csi ? gt.back()
                                                   : rx::dd_pilot_baseline_ce(r[a], p, cfg.noise_var(), num, win));
                    }
                    h_true.push_back(stack_grids(gt));
                    h_est.push_back(stack_grids(ge));
                }
                finish_nmse(m, h_true, h_est);
                rec.metrics.push_back(std::move(m));
            }
        } else {
            const auto op = waveform::ofdm_params_for(num, cfg.ofdm_pilot_spacing);
            op.validate(win.taps() - 1);
            const auto pil = op.pilot_subcarriers();
            const auto dsc = op.data_subcarriers();
            const size_t nsym = dsc.size() * static_cast<size_t>(op.symbols);
            std::vector<channel::TxSignal> tx;
            for (size_t i = 0; i < truth_ats.size(); ++i) {
                const int id = truth_ats[i];
                const CVec sym = cons.map(std::span<const uint8_t>(bits[i].data(), nsym * bps));
                waveform::TFGrid g(op.symbols, op.M);
                size_t s = 0;
                for (int n = 0; n < op.symbols; ++n) {
                    for (size_t q = 0; q < pil.size(); ++q) g(n, pil[q]) = ofdm_pilots_[id][q];
                    for (int m : dsc) g(n, m) = sym[s++];
                }
                tx.push_back({id, waveform::ofdm_modulate(g, op)});
            }
            const auto received = channel::apply_channel(tx, real, op.frame_length(), split_seed(rec.seed, 5));
            for (int adc : cfg.adc_bits) {
                SchemeMetrics m;
                m.scheme = scheme;
                m.adc_bits = adc;
                const auto r = quant::FrontEnd::from_bits(adc).apply(received);

                rx::OfdmEstimate est;
                if (cfg.genie_csi) {
                    est.ats = truth_ats;
                    est.ids = truth_ats;
                    for (int id : truth_ats) {
                        std::vector<waveform::TFGrid> hs;
                        for (int a = 0; a < A; ++a) hs.push_back(ofdm_true_response(real, real.index_of(id), a, op));
                        est.channel.push_back(std::move(hs));
                    }
                } else {
                    est = rx::ofdm_baseline_receiver(r, op, ofdm_dict_, opts);
                }
                fill_activity_errors(m, truth_ats, est.ats, cfg.K);

                std::vector<std::vector<cplx>> h_true, h_est;
                for (size_t u = 0; u < est.ids.size(); ++u) {
                    const int idx = real.index_of(est.ids[u]);
                    if (idx < 0) continue;
                    std::vector<waveform::TFGrid> gt;
                    for (int a = 0; a < A; ++a) gt.push_back(ofdm_true_response(real, idx, a, op));
                    h_true.push_back(stack_tf(gt));
                    h_est.push_back(stack_tf(est.channel[u]));
                }
                finish_nmse(m, h_true, h_est);

                const int Kh = static_cast<int>(est.ids.size());
                if (truth_ats.empty()) {
                    m.ber = 0.0;
                } else if (Kh == 0 || Kh > A) {
                    all_missed(m);
                } else {
                    std::vector<waveform::TFGrid> tf;
                    for (const auto& ra : r) tf.push_back(waveform::ofdm_demodulate(ra, op));
                    std::vector<CVec> soft(Kh, CVec(nsym));
                    Eigen::MatrixXcd Hm(A, Kh);
                    Eigen::VectorXcd yv(A);
                    size_t s = 0;
                    for (int n = 0; n < op.symbols; ++n) {
                        for (int mm : dsc) {
                            for (int a = 0; a < A; ++a) {
                                yv(a) = tf[a](n, mm);
                                for (int u = 0; u < Kh; ++u) Hm(a, u) = est.channel[u][a](n, mm);
                            }
                            const Eigen::VectorXcd x = Hm.colPivHouseholderQr().solve(yv);
                            for (int u = 0; u < Kh; ++u) soft[u][s] = x(u);
                            ++s;
                        }
                    }
                    std::vector<mud::TerminalBits> det, tru;
                    for (int u = 0; u < Kh; ++u) det.push_back({est.ids[u], mud::demap(soft[u], cons)});
                    for (size_t i = 0; i < truth_ats.size(); ++i)
                        tru.push_back({truth_ats[i], std::vector<uint8_t>(bits[i].begin(), bits[i].begin() + nsym * bps)});
                    m.ber = mud::compute_ber(det, tru).aggregate;
                }
                rec.metrics.push_back(std::move(m));
            }
        }
        rec.runtime_ms[scheme_name(scheme)] = ms_since(t0);
    }
    return rec;
}

TrialRecord run_trial(const ExperimentConfig& cfg, int index) { return TrialContext(cfg).run(index); }

std::vector<TrialRecord> run_trials(const ExperimentConfig& cfg) {
    const TrialContext ctx(cfg);
    std::vector<TrialRecord> records(cfg.trials);
    int workers = cfg.workers == 0 ? static_cast<int>(std::max(1u, std::thread::hardware_concurrency())) : cfg.workers;
    workers = std::min(workers, cfg.trials);
    if (workers <= 1) {
        for (int t = 0; t < cfg.trials; ++t) records[t] = ctx.run(t);
        return records;
    }
    std::atomic<int> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const int t = next.fetch_add(1);
                if (t >= cfg.trials) return;
                try {
                    records[t] = ctx.run(t);
                } catch (...) {
                    std::lock_guard lock(mu);
                    if (!failure) failure = std::current_exception();
                    next = cfg.trials;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
    return records;
}

std::vector<ResultRow> aggregate(const ExperimentConfig& cfg, const std::vector<TrialRecord>& records,
                                 const std::string& sweep_var, double sweep_value) {
    std::vector<ResultRow> rows;
    for (Scheme s : cfg.schemes) {
        for (int adc : cfg.adc_bits) {
            for (const char* metric : {"aer", "nmse", "ber"}) {
                std::vector<double> vals;  // in trial order
                for (const auto& r : records) {
                    const SchemeMetrics* m = r.find(s, adc);
                    if (!m) continue;
                    const std::string mt = metric;
                    const std::optional<double>& v = mt == "aer" ? m->aer : mt == "nmse" ? m->nmse : m->ber;
                    if (v) vals.push_back(*v);
                }
                if (vals.empty()) continue;
                ResultRow row;
                row.sweep_var = sweep_var.empty() ? "none" : sweep_var;
                row.sweep_value = sweep_value;
                row.scheme = scheme_name(s);
                row.adc_bits = adc;
                row.metric = metric;
                row.trials = static_cast<int>(vals.size());
                row.root_seed = cfg.seed;
                double sum = 0.0;
                for (double v : vals) sum += v;
                row.mean = sum / vals.size();
                if (vals.size() > 1) {
                    double ss = 0.0;
                    for (double v : vals) ss += (v - row.mean) * (v - row.mean);
                    row.stderr_ = std::sqrt(ss / (vals.size() - 1) / vals.size());
                }
                rows.push_back(row);
            }
        }
    }
    return rows;
}

ResultTable run_experiment(const ExperimentConfig& cfg, std::vector<TrialRecord>* records) {
    cfg.validate();
    ResultTable table;
    table.config = cfg;
    if (cfg.sweep_var.empty()) {
        auto recs = run_trials(cfg);
        table.rows = aggregate(cfg, recs, "", 0.0);
        if (records) *records = std::move(recs);
        return table;
    }
    // Validate every sweep point before running any of them.
    std::vector<ExperimentConfig> points;
    for (double v : cfg.sweep_values) {
        ExperimentConfig c = cfg;
        c.sweep_var.clear();
        c.sweep_values.clear();
        c.set(cfg.sweep_var, fmt_double(v));
        c.validate();
        points.push_back(std::move(c));
    }
    for (size_t i = 0; i < points.size(); ++i) {
        auto recs = run_trials(points[i]);
        auto rows = aggregate(points[i], recs, cfg.sweep_var, cfg.sweep_values[i]);
        table.rows.insert(table.rows.end(), rows.begin(), rows.end());
        if (records) records->insert(records->end(), recs.begin(), recs.end());
    }
    return table;
}

// ---------------------------------------------------------------------------

static constexpr const char* kCsvHeader = "sweep_var,sweep_value,scheme,adc_bits,metric,mean,stderr,trials,root_seed";

std::string to_csv(const ResultTable& table) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : table.rows) {
        out += r.sweep_var + "," + fmt_double(r.sweep_value) + "," + r.scheme + "," + std::to_string(r.adc_bits) + "," +
               r.metric + "," + fmt_double(r.mean) + "," + fmt_double(r.stderr_) + "," + std::to_string(r.trials) + "," +
               std::to_string(r.root_seed) + "\n";
    }
    return out;
}

std::vector<ResultRow> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || trim(line) != kCsvHeader) throw std::runtime_error("parse_csv: unexpected header");
    std::vector<ResultRow> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, ',')) f.push_back(item);
        if (f.size() != 9) throw std::runtime_error("parse_csv: expected 9 fields");
        ResultRow r;
        r.sweep_var = f[0];
        r.sweep_value = to_double("sweep_value", f[1]);
        r.scheme = f[2];
        r.adc_bits = to_int("adc_bits", f[3]);
        r.metric = f[4];
        r.mean = to_double("mean", f[5]);
        r.stderr_ = to_double("stderr", f[6]);
        r.trials = to_int("trials", f[7]);
        r.root_seed = to_u64("root_seed", f[8]);
        rows.push_back(r);
    }
    return rows;
}

std::string to_json(const ResultTable& table) {
    nlohmann::ordered_json j;
    nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
    for (const auto& [k, v] : table.config.canonical()) cfg[k] = v;
    j["config"] = cfg;
    j["config_text"] = table.config.to_text();
    j["columns"] = {"sweep_var", "sweep_value", "scheme", "adc_bits", "metric", "mean", "stderr", "trials", "root_seed"};
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& r : table.rows) {
        nlohmann::ordered_json o;
        o["sweep_var"] = r.sweep_var;
        o["sweep_value"] = r.sweep_value;
        o["scheme"] = r.scheme;
        o["adc_bits"] = r.adc_bits;
        o["metric"] = r.metric;
        o["mean"] = r.mean;
        o["stderr"] = r.stderr_;
        o["trials"] = r.trials;
        o["root_seed"] = r.root_seed;
        rows.push_back(std::move(o));
    }
    j["rows"] = std::move(rows);
    return j.dump(2) + "\n";
}

void emit_results(const ResultTable& table, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    auto write = [](const std::filesystem::path& p, const std::string& s) {
        std::ofstream f(p, std::ios::binary);
        if (!f) throw std::runtime_error("cannot write '" + p.string() + "'");
        f << s;
        if (!f) throw std::runtime_error("write failed for '" + p.string() + "'");
    };
    write(dir / "results.csv", to_csv(table));
    write(dir / "results.json", to_json(table));
}

}  // namespace gfra::sim
