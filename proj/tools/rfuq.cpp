#include "rfuq/sweeps.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef RFUQ_PRESET_DIR
#define RFUQ_PRESET_DIR "presets"
#endif

namespace {

struct CommonOptions {
    std::string config, preset, out, format = "csv";
    std::vector<std::string> overrides;
    long long seed = -1, trials = -1, threads = -1;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool mc_flags)
{
    cmd->add_option("--config", o.config, "Scenario file (key = value with [tables])");
    cmd->add_option("--preset", o.preset, "Shipped preset: fig1, fig1-points, fig2, appE1, appE2");
    cmd->add_option("--out", o.out, "Output path (default: stdout)");
    cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--set", o.overrides, "Override a config entry, e.g. --set scenario.tau0=0.3");
    cmd->add_option("--threads", o.threads, "Worker threads")->check(CLI::PositiveNumber);
    if (mc_flags) {
        cmd->add_option("--seed", o.seed, "Base seed")->check(CLI::NonNegativeNumber);
        cmd->add_option("--trials", o.trials, "Monte Carlo trials per grid point")->check(CLI::PositiveNumber);
    }
}

std::string preset_path(const std::string& name)
{
    const char* env = std::getenv("RFUQ_PRESETS");
    std::string dir = env && *env ? env : RFUQ_PRESET_DIR;
    return dir + "/" + name + ".conf";
}

rfuq::SweepSpec build_spec(const CommonOptions& o)
{
    if (o.config.empty() && o.preset.empty()) throw rfuq::UsageError("one of --config or --preset is required");
    rfuq::Config cfg;
    try {
        if (!o.preset.empty()) cfg = rfuq::Config::load(preset_path(o.preset));
        if (!o.config.empty()) {
            rfuq::Config extra = rfuq::Config::load(o.config);
            for (const auto& [k, v] : extra.values()) cfg.set(k, v);
        }
        for (const auto& s : o.overrides) cfg.set(s);
    } catch (const rfuq::ConfigError& e) {
        throw rfuq::UsageError(e.what());
    }
    if (o.seed >= 0) cfg.set("mc.seed", std::to_string(o.seed));
    if (o.trials > 0) cfg.set("mc.trials", std::to_string(o.trials));
    if (o.threads > 0) cfg.set("run.threads", std::to_string(o.threads));
    return rfuq::sweep_spec_from_config(cfg);
}

void emit(const rfuq::Table& t, const CommonOptions& o)
{
    std::string text = o.format == "json" ? t.to_json() : t.to_csv();
    if (o.out.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(o.out, std::ios::binary);
    if (!f) throw rfuq::UsageError("cannot write '" + o.out + "'");
    f << text;
}

std::string slurp(const std::string& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw rfuq::UsageError("cannot read '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Uncertainty quantification for random-features logistic classification: theory and simulation"};
    app.require_subcommand(1);

    CommonOptions theory_o, mc_o, hyper_o, gamp_o, cmp_o;
    auto* theory = app.add_subcommand("theory-sweep", "Asymptotic overlaps and metrics along a sweep axis");
    add_common(theory, theory_o, false);
    auto* mc = app.add_subcommand("mc-sweep", "Finite-size Monte Carlo estimates with standard errors");
    add_common(mc, mc_o, true);
    auto* hyper = app.add_subcommand("hyperopt", "Optimal regularization per grid point and criterion");
    add_common(hyper, hyper_o, false);
    auto* gamp = app.add_subcommand("gamp-run", "Single GAMP run; emits the iteration trace");
    add_common(gamp, gamp_o, true);
    auto* cmp = app.add_subcommand("compare", "Deviation of Monte Carlo points from theory in standard errors");
    std::string theory_csv, mc_csv;
    cmp->add_option("--theory", theory_csv, "Theory CSV")->required();
    cmp->add_option("--mc", mc_csv, "Monte Carlo CSV")->required();
    cmp->add_option("--out", cmp_o.out, "Output path (default: stdout)");
    cmp->add_option("--format", cmp_o.format, "Output format")->check(CLI::IsMember({"csv", "json"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    }

    try {
        rfuq::Table t;
        const CommonOptions* o = nullptr;
        if (*theory) {
            o = &theory_o;
            t = rfuq::run_theory_sweep(build_spec(*o));
        } else if (*mc) {
            o = &mc_o;
            t = rfuq::run_mc_sweep(build_spec(*o));
        } else if (*hyper) {
            o = &hyper_o;
            t = rfuq::run_hyperopt_sweep(build_spec(*o));
        } else if (*gamp) {
            o = &gamp_o;
            t = rfuq::run_gamp_trace(build_spec(*o));
        } else {
            o = &cmp_o;
            t = rfuq::compare_tables(rfuq::read_csv_table(slurp(theory_csv)), rfuq::read_csv_table(slurp(mc_csv)));
            std::cerr << t.comments.front() << "\n";
        }
        emit(t, *o);
        return t.all_ok ? 0 : 1;
    } catch (const rfuq::UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
