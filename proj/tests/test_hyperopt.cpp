#include "rfuq/hyperopt.hpp"

#include <doctest.h>

#include <cmath>

using namespace rfuq;

namespace {

ScenarioConfig fig1_point(double p_over_n, EstimatorKind est = EstimatorKind::erm)
{
    ScenarioConfig c;
    c.alpha = 1.0 / p_over_n;
    c.gamma = 2.0 * p_over_n;
    c.tau0_sq = 0.25;
    c.activation = Activation::parse("erf");
    c.estimator = est;
    return c;
}

SpectralModel mp_for(const ScenarioConfig& c)
{
    return SpectralModel::marchenko_pastur(activation_moments(c.activation), c.gamma);
}

} // namespace

TEST_CASE("golden_section finds an interior minimum")
{
    auto r = golden_section({[](double x) { return (x - 1.3) * (x - 1.3) + 2.0; }, -4.0, 5.0, 1e-8});
    CHECK(r.x == doctest::Approx(1.3).epsilon(1e-7));
    CHECK(r.value == doctest::Approx(2.0));
    CHECK_FALSE(r.at_boundary);
    auto b = golden_section({[](double x) { return x; }, 0.0, 1.0, 1e-8});
    CHECK(b.at_boundary);
}

TEST_CASE("optimal temperature")
{
    Overlaps o;
    o.m = 0.45;
    o.q = 1.6;
    o.noise = {0.25, 0.15};
    auto t = optimal_temperature(o);
    CHECK_FALSE(t.at_boundary);
    Overlaps scaled = o;
    scaled.m /= 2.0;
    scaled.q /= 4.0;
    CHECK(optimal_temperature(scaled).T == doctest::Approx(t.T / 2.0).epsilon(1e-5));
    double h = 1e-4;
    double slope = (gen_loss(temperature_scale(o, t.T + h)) - gen_loss(temperature_scale(o, t.T - h))) / (2 * h);
    CHECK(std::abs(slope) < 1e-5);
    for (double T = 0.05; T < 20.0; T *= 1.5) CHECK(std::abs(gen_error(temperature_scale(o, T)) - gen_error(o)) < 1e-12);
}

TEST_CASE("lambda_error is not beaten by any grid point")
{
    auto c = fig1_point(2.0);
    auto spec = mp_for(c);
    LambdaSearch search;
    auto r = optimize_lambda(LambdaCriterion::error, c, spec, search);
    CHECK(r.overlaps.status == FixedPointStatus::converged);
    Overlaps prev;
    bool have = false;
    for (int i = 0; i < search.grid_points; ++i) {
        double l10 = search.log10_hi - (search.log10_hi - search.log10_lo) * i / (search.grid_points - 1);
        c.lambda = std::pow(10.0, l10);
        Overlaps o = solve_fixed_point(c, spec, have ? &prev : nullptr);
        if (o.status != FixedPointStatus::converged) continue;
        CHECK(r.objective <= gen_error(o) + 1e-9);
        prev = o;
        have = true;
    }
}

TEST_CASE("lambda_error beats the loss and evidence choices on test error")
{
    auto c = fig1_point(2.0);
    auto spec = mp_for(c);
    auto err = optimize_lambda(LambdaCriterion::error, c, spec);
    auto loss = optimize_lambda(LambdaCriterion::loss, c, spec);
    auto ev = optimize_lambda(LambdaCriterion::evidence, c, spec);
    CHECK(ev.overlaps.estimator == EstimatorKind::eb);
    ScenarioConfig at_ev = c;
    at_ev.lambda = ev.lambda;
    double erm_at_ev = gen_error(solve_fixed_point(at_ev, spec));
    CHECK(err.metrics.gen_error <= loss.metrics.gen_error + 1e-12);
    CHECK(err.metrics.gen_error <= erm_at_ev + 1e-12);

    // local-maximum certificate for the evidence
    ScenarioConfig eb = c;
    eb.estimator = EstimatorKind::eb;
    auto evidence_at = [&](double lambda) {
        eb.lambda = lambda;
        Overlaps o = solve_fixed_point(eb, spec, &ev.overlaps);
        return log_evidence(eb, o, spec);
    };
    double h = 0.02;
    double second = evidence_at(ev.lambda * std::exp(h)) - 2 * evidence_at(ev.lambda) + evidence_at(ev.lambda * std::exp(-h));
    CHECK(second <= 1e-12);
}

TEST_CASE("error and loss choices agree at large sample size")
{
    ScenarioConfig c;
    c.alpha = 200.0;
    c.gamma = 0.5;
    c.tau0_sq = 0.25;
    c.activation = Activation::parse("erf");
    auto spec = mp_for(c);
    auto err = optimize_lambda(LambdaCriterion::error, c, spec);
    auto loss = optimize_lambda(LambdaCriterion::loss, c, spec);
    CHECK(std::abs(err.metrics.gen_error - loss.metrics.gen_error) < 1e-4);
}

TEST_CASE("criterion names")
{
    CHECK(parse_criterion("evidence") == LambdaCriterion::evidence);
    CHECK(to_string(LambdaCriterion::loss) == "loss");
    CHECK_THROWS(parse_criterion("aic"));
}
