#pragma once

#include "rfuq/metrics.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rfuq {

enum class LambdaCriterion { error, loss, evidence };

std::string to_string(LambdaCriterion c);
LambdaCriterion parse_criterion(const std::string& s);

struct ScalarOptProblem {
    std::function<double(double)> objective;
    double lo = 0.0, hi = 1.0;
    double tol = 1e-6;
};

struct ScalarOptResult {
    double x = 0.0;
    double value = 0.0;
    int evaluations = 0;
    bool at_boundary = false;
};

/// Golden-section minimization on [lo, hi]; stops when the bracket is below tol.
ScalarOptResult golden_section(const ScalarOptProblem& p);

struct LambdaOptResult {
    double lambda = 0.0;
    double objective = 0.0;
    Overlaps overlaps;
    MetricsRecord metrics;
    std::vector<std::string> warnings;
};

struct LambdaSearch {
    double log10_lo = -6.0;
    double log10_hi = 3.0;
    int grid_points = 25;
    double rel_tol = 1e-4;
};

/// Coarse log-grid scan (warm-started from large to small lambda), then golden
/// section around the best grid point. error/loss select over erm fixed points,
/// evidence over eb fixed points (cfg.estimator is overridden accordingly).
LambdaOptResult optimize_lambda(LambdaCriterion criterion, const ScenarioConfig& cfg, const SpectralModel& spec,
                                const LambdaSearch& search = {});

struct TemperatureResult {
    double T = 1.0;
    double loss = 0.0;
    bool at_boundary = false;
};

/// argmin_T gen_loss(temperature_scale(o, T)) over T in [0.05, 20].
TemperatureResult optimal_temperature(const Overlaps& o, double lo = 0.05, double hi = 20.0, double tol = 1e-6);

} // namespace rfuq
