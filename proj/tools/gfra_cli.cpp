// Command-line front end: run, validate and sweep experiment configurations.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "gfra/experiment.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 64;

std::string quoted(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out += '\\';
        if (c == '\n') {
            out += "\\n";
            continue;
        }
        out += c;
    }
    return out + "\"";
}

gfra::sim::ExperimentConfig load_config(const std::string& path) {
    auto cfg = gfra::sim::ExperimentConfig::load(path);
    if (const char* env = std::getenv("GFRA_SEED"); env && *env) {
        try {
            size_t pos = 0;
            const std::string v(env);
            if (v[0] == '-') throw 0;
            cfg.seed = std::stoull(v, &pos, 0);
            if (pos != v.size()) throw 0;
        } catch (...) {
            throw gfra::ConfigError("GFRA_SEED", std::string("GFRA_SEED is not an unsigned integer: '") + env + "'");
        }
    }
    return cfg;
}

void report(const gfra::sim::ResultTable& t, const std::string& out) {
    std::printf("wrote %s/results.csv and results.json (%zu rows)\n", out.c_str(), t.rows.size());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Grant-free TS-OTFS random access link simulator"};
    app.require_subcommand(1);

    std::string config, out = "results", var, values;
    int workers = -1;

    auto* run = app.add_subcommand("run", "Run the configured experiment and write CSV/JSON results");
    run->add_option("--config", config, "Configuration file")->required();
    run->add_option("--out", out, "Output directory")->capture_default_str();
    run->add_option("--workers", workers, "Worker threads (0: one per hardware thread)");

    auto* validate = app.add_subcommand("validate", "Check a configuration without running it");
    validate->add_option("--config", config, "Configuration file")->required();

    auto* sweep = app.add_subcommand("sweep", "Run the experiment over a list of values of one key");
    sweep->add_option("--config", config, "Configuration file")->required();
    sweep->add_option("--var", var, "Key to sweep")->required();
    sweep->add_option("--values", values, "Comma-separated values")->required();
    sweep->add_option("--out", out, "Output directory")->capture_default_str();
    sweep->add_option("--workers", workers, "Worker threads (0: one per hardware thread)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error kind=usage message=" << quoted(e.what()) << "\n";
        std::cerr << app.help();
        return kExitUsage;
    }

    try {
        auto cfg = load_config(config);
        if (workers >= 0) {
            cfg.workers = workers;
        }
        if (*sweep) {
            cfg.set("sweep_var", var);
            cfg.set("sweep_values", values);
        }
        cfg.validate();
        if (*validate) {
            std::printf("ok %s\n", config.c_str());
            return 0;
        }
        const auto table = gfra::sim::run_experiment(cfg);
        gfra::sim::emit_results(table, out);
        report(table, out);
        return 0;
    } catch (const gfra::ConfigError& e) {
        std::cerr << "error kind=config key=" << e.key() << " message=" << quoted(e.what()) << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error kind=runtime message=" << quoted(e.what()) << "\n";
        return kExitRuntime;
    }
}
