#include "rfuq/state_evolution.hpp"

#include "rfuq/quadrature.hpp"
#include "rfuq/scalar_kernel.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <sstream>

namespace rfuq {

std::string to_string(FixedPointStatus s)
{
    switch (s) {
    case FixedPointStatus::converged: return "converged";
    case FixedPointStatus::max_iter: return "max_iter";
    case FixedPointStatus::interpolating: return "interpolating";
    case FixedPointStatus::failed: return "failed";
    }
    return "?";
}

EffectiveNoise effective_noise(const ScenarioConfig& cfg, const SpectralModel& spec)
{
    return {cfg.tau0_sq, cfg.teacher_norm_sq * tau_add(spec)};
}

double prior_covariance(EstimatorKind estimator, const SpectralModel& spec, double lambda,
                        double teacher_norm_sq, double x)
{
    if (estimator == EstimatorKind::bo) {
        double om = spec.omega(x);
        if (x <= 0.0 || om <= 0.0) return 0.0;
        return spec.gamma * teacher_norm_sq * spec.kappa1 * spec.kappa1 * x / (om * om);
    }
    return 1.0 / lambda;
}

namespace {

void check_prior(EstimatorKind estimator, double lambda)
{
    if (estimator != EstimatorKind::bo && !(lambda > 0.0))
        throw std::invalid_argument("lambda must be positive for erm/eb/lap");
}

} // namespace

double psi_w(double m_hat, double q_hat, double v_hat, EstimatorKind estimator, const SpectralModel& spec,
             double lambda, double teacher_norm_sq)
{
    check_prior(estimator, lambda);
    const double k1s = spec.kappa1 * spec.kappa1;
    return spectral_integrate(spec, [&](double x) {
        double om = spec.omega(x);
        double c = prior_covariance(estimator, spec, lambda, teacher_norm_sq, x);
        double den = 1.0 + v_hat * om * c;
        if (!(den > 0.0)) throw std::runtime_error("psi_w: nonpositive denominator on the support");
        return 0.5 * (m_hat * m_hat * teacher_norm_sq * k1s * x + q_hat * om) * c / den - 0.5 * std::log(den);
    });
}

PsiWGrad psi_w_grad(double m_hat, double q_hat, double v_hat, EstimatorKind estimator,
                    const SpectralModel& spec, double lambda, double teacher_norm_sq)
{
    check_prior(estimator, lambda);
    const double k1s = spec.kappa1 * spec.kappa1;
    PsiWGrad g;
    for (std::size_t i = 0; i < spec.nodes.size(); ++i) {
        double x = spec.nodes[i], mu = spec.weights[i];
        double om = spec.omega(x);
        double c = prior_covariance(estimator, spec, lambda, teacher_norm_sq, x);
        double den = 1.0 + v_hat * om * c;
        if (!(den > 0.0)) throw std::runtime_error("psi_w_grad: nonpositive denominator on the support");
        double b = teacher_norm_sq * k1s * x;
        g.d_mhat += mu * m_hat * b * c / den;
        g.d_qhat += 0.5 * mu * om * c / den;
        g.d_vhat -= 0.5 * mu * ((m_hat * m_hat * b + q_hat * om) * om * c * c / (den * den) + om * c / den);
    }
    return g;
}

namespace {

// Channel values for y = +1 and y = -1 at the same omega.
std::array<ChannelEval, 2> channel_pair(const ScenarioConfig& cfg, double omega, double V, const EffectiveNoise& noise)
{
    if (cfg.estimator == EstimatorKind::erm || cfg.estimator == EstimatorKind::lap)
        return {channel_eval(cfg.estimator, 1, omega, V, noise), channel_eval(cfg.estimator, -1, omega, V, noise)};
    double scale = cfg.estimator == EstimatorKind::eb ? cfg.beta : 1.0;
    double var = cfg.estimator == EstimatorKind::eb ? cfg.beta * cfg.beta * V : V + noise.total();
    // One smoothed-sigmoid evaluation on the negative side serves both labels.
    double t = scale * omega;
    SmoothedSigmoid s = smoothed_sigmoid_all(-std::abs(t), var);
    std::array<ChannelEval, 2> out;
    for (int k = 0; k < 2; ++k) {
        int y = k == 0 ? 1 : -1;
        bool low = y * t <= 0.0;
        double val = low ? s.value : 1.0 - s.value;
        double d2 = low ? s.d2 : -s.d2;
        val = std::max(val, std::numeric_limits<double>::min());
        double r1 = s.d1 / val, r2 = d2 / val;
        out[k].value = scale * y * r1;
        out[k].d_omega = scale * scale * (r2 - r1 * r1);
        out[k].log_partition = std::log(val);
    }
    return out;
}

// Z0 and its omega-derivative for both labels at omega = a * zeta.
struct Z0Pair {
    double z[2];
    double dz[2];
};

Z0Pair z0_pair(double omega, double var)
{
    SmoothedSigmoid s = smoothed_sigmoid_all(-std::abs(omega), var);
    Z0Pair p;
    for (int k = 0; k < 2; ++k) {
        int y = k == 0 ? 1 : -1;
        p.z[k] = y * omega <= 0.0 ? s.value : 1.0 - s.value;
        p.dz[k] = y * s.d1;
    }
    return p;
}

bool finite(const Overlaps& o)
{
    return std::isfinite(o.m) && std::isfinite(o.q) && std::isfinite(o.v) && std::isfinite(o.m_hat) &&
           std::isfinite(o.q_hat) && std::isfinite(o.v_hat);
}

} // namespace

Overlaps update_hats(const Overlaps& current, const ScenarioConfig& cfg)
{
    Overlaps o = current;
    if (!(current.v > 0.0)) throw SolverError("update_hats: v must be positive", current);
    const QuadratureRule& r = normal_rule(cfg.solver.xi_order);
    double a = current.m_over_sqrt_q();
    double sq = std::sqrt(std::max(current.q, 0.0));
    double var0 = std::max(current.label_var(), 0.0);
    double mh = 0.0, qh = 0.0, vh = 0.0;
    for (int k = 0; k < r.order; ++k) {
        double zeta = r.nodes[k], w = r.weights[k];
        Z0Pair z0 = z0_pair(a * zeta, var0);
        auto ch = channel_pair(cfg, sq * zeta, current.v, current.noise);
        for (int j = 0; j < 2; ++j) {
            mh += w * z0.dz[j] * ch[j].value;
            qh += w * z0.z[j] * ch[j].value * ch[j].value;
            vh -= w * z0.z[j] * ch[j].d_omega;
        }
    }
    o.m_hat = cfg.alpha * std::sqrt(cfg.gamma) * mh;
    o.q_hat = cfg.alpha * qh;
    o.v_hat = cfg.alpha * vh;
    return o;
}

Overlaps update_overlaps(const Overlaps& current, const ScenarioConfig& cfg, const SpectralModel& spec)
{
    Overlaps o = current;
    PsiWGrad g = psi_w_grad(current.m_hat, current.q_hat, current.v_hat, cfg.estimator, spec, cfg.lambda,
                            cfg.teacher_norm_sq);
    o.m = std::sqrt(spec.gamma) * g.d_mhat;
    o.v = 2.0 * g.d_qhat;
    o.q = -2.0 * g.d_vhat - o.v;
    return o;
}

namespace {

Overlaps initial_state(const ScenarioConfig& cfg, const SpectralModel& spec, const Overlaps* init)
{
    Overlaps o;
    o.rho = cfg.teacher_norm_sq;
    o.noise = effective_noise(cfg, spec);
    o.estimator = cfg.estimator;
    if (init) {
        o.m = init->m;
        o.q = init->q;
        o.v = init->v;
    }
    return o;
}

double rel_change(double a, double b) { return std::abs(a - b) / std::max(std::abs(a), 1e-8); }

void validate(const ScenarioConfig& cfg)
{
    if (!(cfg.alpha >= 0.0) || !(cfg.gamma > 0.0)) throw std::invalid_argument("alpha >= 0 and gamma > 0 required");
    if (!(cfg.tau0_sq >= 0.0)) throw std::invalid_argument("tau0^2 must be >= 0");
    if (!(cfg.teacher_norm_sq > 0.0)) throw std::invalid_argument("teacher norm must be positive");
    if (!(cfg.solver.damping >= 0.0 && cfg.solver.damping < 1.0)) throw std::invalid_argument("damping must lie in [0,1)");
    check_prior(cfg.estimator, cfg.lambda);
}

} // namespace

Overlaps se_step(const Overlaps& current, const ScenarioConfig& cfg, const SpectralModel& spec)
{
    Overlaps h = update_hats(current, cfg);
    Overlaps n = update_overlaps(h, cfg, spec);
    double eta = cfg.solver.damping;
    n.m = (1.0 - eta) * n.m + eta * current.m;
    n.q = (1.0 - eta) * n.q + eta * current.q;
    n.v = (1.0 - eta) * n.v + eta * current.v;
    if (!finite(n)) throw SolverError("se_step: non-finite state", n);
    return n;
}

Overlaps solve_fixed_point(const ScenarioConfig& cfg, const SpectralModel& spec, const Overlaps* init)
{
    validate(cfg);
    Overlaps o = initial_state(cfg, spec, init);
    double eta = cfg.solver.damping;
    std::array<int, 3> signs{0, 0, 0};
    o.status = FixedPointStatus::max_iter;
    for (int it = 1; it <= cfg.solver.max_iter; ++it) {
        Overlaps h = update_hats(o, cfg);
        if (!finite(h)) throw SolverError("solve_fixed_point: non-finite hats", h);
        Overlaps n = update_overlaps(h, cfg, spec);
        if (!finite(n) || !(n.v > 0.0) || n.q < 0.0) {
            std::ostringstream msg;
            msg << "solve_fixed_point: unphysical state at iteration " << it << " (m=" << n.m << ", q=" << n.q
                << ", v=" << n.v << ")";
            throw SolverError(msg.str(), n);
        }
        double res = std::max({rel_change(n.m, o.m), rel_change(n.q, o.q), rel_change(n.v, o.v)});
        signs = {signs[1], signs[2], n.q > o.q ? 1 : -1};
        if (cfg.solver.auto_damping && signs[0] != 0 && signs[0] == -signs[1] && signs[1] == -signs[2])
            eta = std::max(eta, 0.85);
        Overlaps next = n;
        next.m = (1.0 - eta) * n.m + eta * o.m;
        next.q = (1.0 - eta) * n.q + eta * o.q;
        next.v = (1.0 - eta) * n.v + eta * o.v;
        o = next;
        o.iterations = it;
        o.residual = res;
        if (res < cfg.solver.tol) {
            o.status = FixedPointStatus::converged;
            break;
        }
        if (o.q > 1e8) {
            o.status = FixedPointStatus::interpolating;
            break;
        }
    }
    o = update_hats(o, cfg);
    o.hat_tau_sq = hat_tau(cfg.estimator, o, spec, cfg.lambda);
    return o;
}

Overlaps solve_with_homotopy(const ScenarioConfig& cfg, const SpectralModel& spec, const Overlaps* init)
{
    if (init) {
        Overlaps o = solve_fixed_point(cfg, spec, init);
        if (o.status == FixedPointStatus::converged) return o;
    }
    if (cfg.lambda >= 1e-1) return solve_fixed_point(cfg, spec);
    ScenarioConfig c = cfg;
    Overlaps o;
    bool have = false;
    for (double lam = 1e-1; lam > cfg.lambda * 1.0000001; lam /= std::sqrt(10.0)) {
        c.lambda = lam;
        o = solve_fixed_point(c, spec, have ? &o : nullptr);
        have = true;
    }
    c.lambda = cfg.lambda;
    return solve_fixed_point(c, spec, have ? &o : nullptr);
}

double hat_tau(EstimatorKind estimator, const Overlaps& o, const SpectralModel& spec, double lambda)
{
    double t = 0.0;
    switch (estimator) {
    case EstimatorKind::erm: return 0.0;
    case EstimatorKind::eb: t = o.v; break;
    case EstimatorKind::bo: t = o.v + o.noise.total(); break;
    case EstimatorKind::lap:
        t = spectral_integrate(spec, [&](double x) {
            double om = spec.omega(x);
            return om / (lambda + o.v_hat * om);
        });
        break;
    }
    if (t < 0.0) throw std::runtime_error("hat_tau: negative prediction variance");
    return t;
}

double psi_y(const ScenarioConfig& cfg, double m, double q, double v, const EffectiveNoise& noise)
{
    if (cfg.estimator != EstimatorKind::eb && cfg.estimator != EstimatorKind::bo)
        throw std::invalid_argument("psi_y is defined for the Bayesian channels eb and bo");
    Overlaps o;
    o.m = m;
    o.q = q;
    o.v = v;
    o.rho = cfg.teacher_norm_sq;
    o.noise = noise;
    const QuadratureRule& r = normal_rule(cfg.solver.xi_order);
    double a = o.m_over_sqrt_q(), sq = std::sqrt(std::max(q, 0.0));
    double var0 = std::max(o.label_var(), 0.0);
    double s = 0.0;
    for (int k = 0; k < r.order; ++k) {
        Z0Pair z0 = z0_pair(a * r.nodes[k], var0);
        auto ch = channel_pair(cfg, sq * r.nodes[k], v, noise);
        for (int j = 0; j < 2; ++j) s += r.weights[k] * z0.z[j] * ch[j].log_partition;
    }
    return s;
}

double free_entropy(const ScenarioConfig& cfg, const SpectralModel& spec, const Overlaps& o)
{
    double pw = psi_w(o.m_hat, o.q_hat, o.v_hat, cfg.estimator, spec, cfg.lambda, cfg.teacher_norm_sq);
    double py = cfg.alpha > 0.0 ? psi_y(cfg, o.m, o.q, o.v, o.noise) : 0.0;
    return -o.m * o.m_hat / std::sqrt(spec.gamma) + 0.5 * (o.q * o.v_hat - o.q_hat * o.v + o.v_hat * o.v) + pw +
           cfg.alpha * py;
}

double free_energy(const ScenarioConfig& cfg, const Overlaps& overlaps, const SpectralModel& spec)
{
    return -free_entropy(cfg, spec, overlaps);
}

double log_evidence(const ScenarioConfig& cfg, const Overlaps& overlaps, const SpectralModel& spec)
{
    return free_entropy(cfg, spec, overlaps);
}

} // namespace rfuq
