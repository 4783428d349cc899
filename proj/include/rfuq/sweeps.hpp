#pragma once

#include "rfuq/config.hpp"
#include "rfuq/hyperopt.hpp"
#include "rfuq/monte_carlo.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace rfuq {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// One curve of a sweep, written "estimator[@lambda][+ts]" where lambda is a
/// number or one of error | loss | evidence, and +ts applies temperature scaling.
struct CurveSpec {
    EstimatorKind estimator = EstimatorKind::erm;
    std::string lambda_spec;
    bool temperature = false;

    std::string label() const;
    static CurveSpec parse(const std::string& text);
};

enum class SweepAxis { p_over_n, lambda, T, level };

std::string to_string(SweepAxis a);
SweepAxis parse_axis(const std::string& s);

struct SweepSpec {
    std::string name;
    double n_over_d = 2.0;
    double p_over_n = 1.0;
    double tau0 = 0.5;
    double teacher_norm_sq = 1.0;
    double beta = 1.0;
    double lambda = 1e-2;
    Activation activation;
    std::string eigenvalue_file;
    SweepAxis axis = SweepAxis::p_over_n;
    std::vector<double> grid;
    std::vector<CurveSpec> curves;
    std::vector<double> levels = default_levels();
    std::vector<LambdaCriterion> criteria{LambdaCriterion::error, LambdaCriterion::loss, LambdaCriterion::evidence};
    int d = 200;
    int trials = 30;
    int n_val = 1000;
    int n_test = 4000;
    std::uint64_t seed = 1;
    int threads = 1;
    GampOptions gamp;
    double gamp_p_over_n = 1.0;

    /// Theory scenario at one grid coordinate (p_over_n axis value or the base).
    ScenarioConfig scenario_at(double p_over_n) const;
    McScenario mc_scenario_at(double p_over_n) const;
    double p_over_n_at(double x) const { return axis == SweepAxis::p_over_n ? x : p_over_n; }
};

/// Reads [scenario], [sweep], [mc] and [gamp] tables; throws UsageError on
/// invalid or missing fields.
SweepSpec sweep_spec_from_config(const Config& cfg);

/// A cell is empty, a number or a string; empty and non-finite numbers print as "".
using Cell = std::variant<std::monostate, double, std::string>;

struct Table {
    std::string schema;
    std::vector<std::string> comments;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
    bool all_ok = true;

    std::string to_csv() const;
    std::string to_json() const;
};

/// Reads a CSV produced by to_csv (comment lines skipped) back into a table of strings.
Table read_csv_table(const std::string& text);

Table run_theory_sweep(const SweepSpec& spec);
Table run_mc_sweep(const SweepSpec& spec);
Table run_hyperopt_sweep(const SweepSpec& spec);
/// Single GAMP run at gamp_p_over_n; the table is the iteration trace.
Table run_gamp_trace(const SweepSpec& spec);
/// Joins theory and MC tables on (x, curve) and reports |mc - theory| / se per metric.
Table compare_tables(const Table& theory, const Table& mc);

/// Runs fn(i) for i in [0, count) on up to `threads` workers; exceptions propagate.
void parallel_for(int count, int threads, const std::function<void(int)>& fn);

} // namespace rfuq
