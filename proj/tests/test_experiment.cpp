#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "gfra/experiment.hpp"

using namespace gfra;
using namespace gfra::sim;

namespace {

const char* kTiny = R"(# tiny
M = 32
N = 4
ts_len = 32
L_max = 8
D_max = 4
K = 12
K_a = 2
antennas = 4
snr_db = 20
trials = 3
seed = 3
)";

std::string read(const std::filesystem::path& p) {
    std::ifstream f(p);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

std::string config_key_of(const std::string& text) {
    try {
        ExperimentConfig::parse(text).validate();
    } catch (const ConfigError& e) {
        return e.key();
    }
    return "";
}

}  // namespace

TEST_CASE("config parsing") {
    const auto cfg = ExperimentConfig::parse(kTiny);
    CHECK(cfg.M == 32);
    CHECK(cfg.K_a == 2);
    CHECK(cfg.snr_db == 20.0);
    CHECK(cfg.ofdm_pilot_spacing == 2);
    CHECK(cfg.schemes.size() == 3);
    CHECK_NOTHROW(cfg.validate());

    // Canonical text parses back to the same canonical form.
    const auto again = ExperimentConfig::parse(cfg.to_text());
    CHECK(again.canonical() == cfg.canonical());

    const std::string base = kTiny;
    CHECK(config_key_of(base + "bogus = 1\n") == "bogus");
    CHECK(config_key_of(base + "M = 16\n") == "M");  // duplicate
    CHECK(config_key_of("M = 32\nN = 4\nK = 12\nsnr_db = 1\ntrials = 1\n") == "K_a");
    CHECK(config_key_of(base + "antennas = 0\n") == "antennas");
    CHECK(config_key_of(base + "modulation = 8psk\n") == "modulation");
    CHECK(config_key_of(base + "adc_bits = 0,3,x\n") == "adc_bits");
    CHECK(config_key_of(base + "schemes = ts_otfs,foo\n") == "schemes");
    CHECK(config_key_of(base + "ts_len = 10\n") == "ts_len");
    CHECK(config_key_of(std::string(kTiny).replace(std::string(kTiny).find("K_a = 2"), 7, "K_a = 13")) == "K_a");

    auto c2 = cfg;
    c2.set("adc_bits", "0, 3,2");
    CHECK(c2.adc_bits == std::vector<int>{0, 3, 2});
    c2.set("snr_db", "inf");
    CHECK(std::isinf(c2.snr_db));
    CHECK(c2.noise_var() == 0.0);
    c2.set("genie_csi", "true");
    CHECK(c2.genie_csi);
    CHECK_THROWS_AS(c2.set("genie_csi", "maybe"), ConfigError);
    CHECK_THROWS_AS(c2.set("M", "3.5"), ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load("/nonexistent/x.cfg"), ConfigError);
}

TEST_CASE("shipped profiles validate") {
    for (const char* name : {"desk.cfg", "full_scale.cfg", "noiseless_genie.cfg"}) {
        CAPTURE(name);
        const auto cfg = ExperimentConfig::load(std::filesystem::path(GFRA_CONFIG_DIR) / name);
        CHECK_NOTHROW(cfg.validate());
    }
    const auto desk = ExperimentConfig::load(std::filesystem::path(GFRA_CONFIG_DIR) / "desk.cfg");
    CHECK(desk.M == 64);
    CHECK(desk.N == 8);
    CHECK(desk.K == 100);
    CHECK(desk.K_a == 10);
    CHECK(desk.antennas == 16);
    CHECK(desk.snr_db == 15.0);
    CHECK(desk.nu_max == 178.2e3);
}

TEST_CASE("full-scale profile runs one trial") {
    auto cfg = ExperimentConfig::load(std::filesystem::path(GFRA_CONFIG_DIR) / "full_scale.cfg");
    cfg.trials = 1;
    cfg.adc_bits = {0};
    const auto table = run_experiment(cfg);
    // aer, nmse and ber for ts_otfs and OFDM; nmse only for the DD-pilot baseline.
    CHECK(table.rows.size() == 7);
}

TEST_CASE("metric definitions") {
    CHECK(compute_aer({1, 3}, {1, 3}, 5) == 0.0);
    CHECK(compute_aer({1, 3}, {1, 4}, 5) == doctest::Approx(0.4));
    CHECK(compute_aer({0, 1, 2, 3, 4}, {}, 5) == 1.0);
    CHECK(compute_aer({1, 2, 3}, {1, 2, 3}, 10) == 0.0);
    CHECK(compute_aer({1, 2, 3}, {1, 4}, 10) == doctest::Approx(0.3));
    CHECK(compute_aer({}, {}, 5) == 0.0);
    CHECK(compute_aer({}, {0, 1, 2, 3, 4}, 5) == 1.0);
    CHECK_THROWS(compute_aer({}, {}, 0));

    CHECK(!compute_nmse({}, {}).has_value());
    CHECK(!compute_nmse({{0.0, 0.0}}, {{1.0, 1.0}}).has_value());
    const std::vector<cplx> h{{1.0, -2.0}, {0.5, 0.0}, {0.0, 3.0}};
    std::vector<cplx> twice = h;
    for (auto& z : twice) z *= 2.0;
    CHECK(*compute_nmse({h}, {h}) == 0.0);
    CHECK(*compute_nmse({h}, {std::vector<cplx>(3)}) == 1.0);
    CHECK(*compute_nmse({h}, {twice}) == doctest::Approx(1.0));
    const auto n = compute_nmse({{1.0, 0.0}, {2.0, 0.0}}, {{1.5, 0.0}, {2.0, 1.0}});
    REQUIRE(n.has_value());
    CHECK(*n == doctest::Approx((0.25 + 0.25) / 2));
    CHECK_THROWS_AS(compute_nmse({{1.0}}, {}), DimensionError);
}

TEST_CASE("noiseless genie profile gives zero error everywhere") {
    const auto cfg = ExperimentConfig::load(std::filesystem::path(GFRA_CONFIG_DIR) / "noiseless_genie.cfg");
    const auto table = run_experiment(cfg);
    REQUIRE(!table.rows.empty());
    for (const auto& r : table.rows) {
        CAPTURE(r.scheme);
        CAPTURE(r.metric);
        CHECK(r.mean < 1e-12);
    }
}

TEST_CASE("aggregation, CSV and JSON") {
    auto cfg = ExperimentConfig::parse(kTiny);
    std::vector<TrialRecord> recs;
    const auto table = run_experiment(cfg, &recs);
    REQUIRE(recs.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(recs[i].index == i);

    // Mean and standard error recomputed from the per-trial records.
    for (const auto& row : table.rows) {
        std::vector<double> v;
        for (const auto& r : recs) {
            const auto* m = r.find(parse_scheme(row.scheme), row.adc_bits);
            REQUIRE(m != nullptr);
            const auto& o = row.metric == "aer" ? m->aer : row.metric == "nmse" ? m->nmse : m->ber;
            if (o) v.push_back(*o);
        }
        REQUIRE(static_cast<int>(v.size()) == row.trials);
        double mean = 0.0;
        for (double x : v) mean += x / v.size();
        double ss = 0.0;
        for (double x : v) ss += (x - mean) * (x - mean);
        CHECK(row.mean == doctest::Approx(mean));
        CHECK(row.stderr_ == doctest::Approx(std::sqrt(ss / (v.size() - 1) / v.size())));
    }

    const std::string csv = to_csv(table);
    CHECK(csv.rfind("sweep_var,sweep_value,scheme,adc_bits,metric,mean,stderr,trials,root_seed\n", 0) == 0);
    const auto back = parse_csv(csv);
    REQUIRE(back.size() == table.rows.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].scheme == table.rows[i].scheme);
        CHECK(back[i].metric == table.rows[i].metric);
        CHECK(back[i].mean == table.rows[i].mean);  // %.17g round-trips exactly
        CHECK(back[i].stderr_ == table.rows[i].stderr_);
        CHECK(back[i].root_seed == 3);
    }
    const ResultTable empty{cfg, {}};
    CHECK(parse_csv(to_csv(empty)).empty());

    const auto j = nlohmann::json::parse(to_json(table));
    CHECK(j["rows"].size() == table.rows.size());
    CHECK(j["config"]["K"] == "12");

    const auto dir = std::filesystem::temp_directory_path() / "gfra_emit_test";
    std::filesystem::remove_all(dir);
    emit_results(table, dir);
    CHECK(read(dir / "results.csv") == csv);
    CHECK(std::filesystem::exists(dir / "results.json"));
    std::filesystem::remove_all(dir);
}

TEST_CASE("results do not depend on workers or repetition") {
    auto cfg = ExperimentConfig::parse(kTiny);
    cfg.adc_bits = {0, 2};
    cfg.workers = 1;
    const std::string a = to_csv(run_experiment(cfg));
    cfg.workers = 3;
    const std::string b = to_csv(run_experiment(cfg));
    CHECK(a == b);
    cfg.seed = 4;
    CHECK(to_csv(run_experiment(cfg)) != a);
}

TEST_CASE("a single trial is reproducible") {
    const auto cfg = ExperimentConfig::parse(kTiny);
    const TrialContext ctx(cfg);
    const auto a = ctx.run(0);
    const auto b = run_trial(cfg, 0);
    CHECK(a.seed == b.seed);
    CHECK(a.true_ats == b.true_ats);
    REQUIRE(a.metrics.size() == b.metrics.size());
    for (size_t i = 0; i < a.metrics.size(); ++i) {
        CHECK(a.metrics[i].aer == b.metrics[i].aer);
        CHECK(a.metrics[i].nmse_per_terminal == b.metrics[i].nmse_per_terminal);
        CHECK(a.metrics[i].ber == b.metrics[i].ber);
        if (a.metrics[i].aer)
            CHECK(a.metrics[i].misses + a.metrics[i].false_alarms == doctest::Approx(*a.metrics[i].aer * cfg.K));
    }
}

TEST_CASE("sweeps pair the trials across points") {
    auto cfg = ExperimentConfig::parse(kTiny);
    cfg.schemes = {Scheme::ts_otfs};
    cfg.sweep_var = "snr_db";
    cfg.sweep_values = {10.0, 30.0};
    std::vector<TrialRecord> recs;
    const auto t = run_experiment(cfg, &recs);
    REQUIRE(t.rows.size() == 6);
    CHECK(t.rows[0].sweep_var == "snr_db");
    CHECK(t.rows[0].sweep_value == 10.0);
    CHECK(t.rows[3].sweep_value == 30.0);
    CHECK(recs.size() == 6);
    CHECK(recs[0].true_ats == recs[3].true_ats);
    CHECK(recs[0].seed == recs[3].seed);

    cfg.sweep_values = {10.0, -400.0};
    cfg.sweep_var = "antennas";
    CHECK_THROWS_AS(run_experiment(cfg), ConfigError);
}

TEST_CASE("genie CSI never detects worse than estimated CSI") {
    auto cfg = ExperimentConfig::parse(kTiny);
    cfg.trials = 200;
    cfg.snr_db = 8.0;
    cfg.schemes = {Scheme::ts_otfs};
    auto genie = cfg;
    genie.genie_csi = true;
    std::vector<TrialRecord> est, gen;
    run_experiment(cfg, &est);
    run_experiment(genie, &gen);
    REQUIRE(est.size() == gen.size());
    std::vector<double> diff;
    double mean_est = 0.0, mean_gen = 0.0;
    for (size_t i = 0; i < est.size(); ++i) {
        REQUIRE(est[i].true_ats == gen[i].true_ats);
        const auto* a = est[i].find(Scheme::ts_otfs, 0);
        const auto* b = gen[i].find(Scheme::ts_otfs, 0);
        REQUIRE((a && b && a->ber && b->ber));
        diff.push_back(*a->ber - *b->ber);
        mean_est += *a->ber / est.size();
        mean_gen += *b->ber / est.size();
    }
    double m = 0.0, v = 0.0;
    for (double d : diff) m += d / diff.size();
    for (double d : diff) v += (d - m) * (d - m) / (diff.size() - 1);
    MESSAGE("BER estimated " << mean_est << ", genie " << mean_gen);
    CHECK(m >= -2.0 * std::sqrt(v / diff.size()));
}
