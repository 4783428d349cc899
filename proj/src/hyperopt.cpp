#include "rfuq/hyperopt.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace rfuq {

std::string to_string(LambdaCriterion c)
{
    switch (c) {
    case LambdaCriterion::error: return "error";
    case LambdaCriterion::loss: return "loss";
    case LambdaCriterion::evidence: return "evidence";
    }
    return "?";
}

LambdaCriterion parse_criterion(const std::string& s)
{
    if (s == "error") return LambdaCriterion::error;
    if (s == "loss") return LambdaCriterion::loss;
    if (s == "evidence") return LambdaCriterion::evidence;
    throw std::invalid_argument("unknown lambda criterion '" + s + "'");
}

ScalarOptResult golden_section(const ScalarOptProblem& p)
{
    if (!(p.lo < p.hi)) throw std::invalid_argument("golden_section: empty interval");
    const double r = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = p.lo, b = p.hi;
    double c = b - r * (b - a), d = a + r * (b - a);
    double fc = p.objective(c), fd = p.objective(d);
    int evals = 2;
    while (b - a > p.tol) {
        if (fc <= fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = p.objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = p.objective(d);
        }
        ++evals;
    }
    ScalarOptResult res;
    res.x = fc <= fd ? c : d;
    res.value = std::min(fc, fd);
    res.evaluations = evals;
    double span = p.hi - p.lo;
    res.at_boundary = res.x - p.lo < 1e-3 * span || p.hi - res.x < 1e-3 * span;
    return res;
}

namespace {

struct Evaluated {
    double objective = std::numeric_limits<double>::infinity();
    Overlaps overlaps;
    bool ok = false;
};

Evaluated evaluate(LambdaCriterion criterion, ScenarioConfig cfg, const SpectralModel& spec, double lambda,
                   const Overlaps* warm)
{
    cfg.lambda = lambda;
    Evaluated e;
    try {
        e.overlaps = solve_fixed_point(cfg, spec, warm);
    } catch (const SolverError&) {
        return e;
    }
    const Overlaps& o = e.overlaps;
    if (o.status == FixedPointStatus::max_iter || o.status == FixedPointStatus::failed) return e;
    e.ok = true;
    switch (criterion) {
    case LambdaCriterion::error: e.objective = gen_error(o); break;
    case LambdaCriterion::loss:
        e.objective = o.status == FixedPointStatus::interpolating ? std::numeric_limits<double>::infinity() : gen_loss(o);
        break;
    case LambdaCriterion::evidence: e.objective = -log_evidence(cfg, o, spec); break;
    }
    return e;
}

} // namespace

LambdaOptResult optimize_lambda(LambdaCriterion criterion, const ScenarioConfig& cfg_in, const SpectralModel& spec,
                                const LambdaSearch& search)
{
    ScenarioConfig cfg = cfg_in;
    cfg.estimator = criterion == LambdaCriterion::evidence ? EstimatorKind::eb : EstimatorKind::erm;
    const int n = search.grid_points;
    std::vector<double> grid(n);
    for (int i = 0; i < n; ++i) grid[i] = search.log10_lo + (search.log10_hi - search.log10_lo) * i / (n - 1);

    // Scan from strong to weak regularization so each point warm-starts from an easier one.
    std::vector<Evaluated> scan(n);
    const Overlaps* warm = nullptr;
    for (int i = n - 1; i >= 0; --i) {
        scan[i] = evaluate(criterion, cfg, spec, std::pow(10.0, grid[i]), warm);
        warm = scan[i].ok ? &scan[i].overlaps : nullptr;
    }
    int best = -1;
    for (int i = 0; i < n; ++i)
        if (scan[i].ok && (best < 0 || scan[i].objective < scan[best].objective)) best = i;
    if (best < 0 || !std::isfinite(scan[best].objective))
        throw std::runtime_error("optimize_lambda: every grid point diverged");

    LambdaOptResult out;
    int local_minima = 0;
    for (int i = 1; i + 1 < n; ++i)
        if (scan[i].ok && scan[i].objective < scan[i - 1].objective && scan[i].objective < scan[i + 1].objective)
            ++local_minima;
    if (local_minima > 1) out.warnings.push_back("multimodal objective on the lambda grid; global grid minimum refined");

    double lo = grid[std::max(best - 1, 0)], hi = grid[std::min(best + 1, n - 1)];
    Overlaps anchor = scan[best].overlaps;
    ScalarOptProblem p;
    p.lo = lo;
    p.hi = hi;
    p.tol = search.rel_tol / std::log(10.0);
    p.objective = [&](double lg) { return evaluate(criterion, cfg, spec, std::pow(10.0, lg), &anchor).objective; };
    ScalarOptResult r = golden_section(p);

    double lam = std::pow(10.0, r.x);
    Evaluated fin = evaluate(criterion, cfg, spec, lam, &anchor);
    if (!fin.ok || fin.objective > scan[best].objective) {
        lam = std::pow(10.0, grid[best]);
        fin = scan[best];
    }
    if (best == 0 || best == n - 1) {
        std::ostringstream w;
        w << "optimum at the lambda search boundary (log10 lambda = " << grid[best] << ")";
        out.warnings.push_back(w.str());
    }
    out.lambda = lam;
    out.objective = fin.objective;
    out.overlaps = fin.overlaps;
    out.metrics = compute_metrics(fin.overlaps);
    return out;
}

TemperatureResult optimal_temperature(const Overlaps& o, double lo, double hi, double tol)
{
    ScalarOptProblem p;
    p.lo = lo;
    p.hi = hi;
    p.tol = tol;
    p.objective = [&](double T) { return gen_loss(temperature_scale(o, T)); };
    ScalarOptResult r = golden_section(p);
    return {r.x, r.value, r.at_boundary};
}

} // namespace rfuq
